"""
CLI subcommands package initialization
"""
