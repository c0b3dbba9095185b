import sys

from app.cli import main

if __name__ == '__main__':
    # Run the requested subcommand
    sys.exit(main())
