"""Pipeline steps behind the command-line sub-commands."""
