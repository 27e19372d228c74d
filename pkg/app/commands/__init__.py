from .cert import register_commands as register_cert_commands
from .publish import register_commands as register_publish_commands
from .directory import register_commands as register_directory_commands
from .client import register_commands as register_client_commands
from .server import register_commands as register_server_commands
from .cost import register_commands as register_cost_commands
from .sim import register_commands as register_sim_commands


def register_all_commands(subparsers):
    register_cert_commands(subparsers)
    register_publish_commands(subparsers)
    register_directory_commands(subparsers)
    register_client_commands(subparsers)
    register_server_commands(subparsers)
    register_cost_commands(subparsers)
    register_sim_commands(subparsers)
