#!/usr/bin/env python3

import sys

import cli

version = cli.version

if __name__ == "__main__":
    sys.exit(cli.main())
