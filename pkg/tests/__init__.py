# ABOUTME: Test package marker for the selforg-sim test suite.
# ABOUTME: Lets pytest import test helpers as a package.
