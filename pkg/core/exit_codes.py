"""Process exit codes used by the management commands."""

SUCCESS = 0
USAGE = 2
CAPACITY = 3
CONFIG_MISMATCH = 4
IO_FAILURE = 5
PARTIAL_FAILURE = 6
