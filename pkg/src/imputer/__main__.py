# Helpful for debugging
from imputer import main

main()
