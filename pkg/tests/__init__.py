# call from project directory
# python -m unittest
