"""Protokollschichten: Transport, Chaining, Sicherheit, Content-Fetch."""
