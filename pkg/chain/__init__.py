"""Bitcoin-Schicht: Transaktionsmodell, Skripte, Gebühren, secp256k1 und Einbettung."""
