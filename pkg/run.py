"""
Run the ocular detector command line
"""
from ocular.main import main


if __name__ == "__main__":
    main()
