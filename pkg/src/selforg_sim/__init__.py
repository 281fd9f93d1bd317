# ABOUTME: selforg-sim package: churn demons, self-organization criteria and trace monitors.
# ABOUTME: Exposes the package version.

__version__ = "0.1.0"
