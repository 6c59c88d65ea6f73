# noinspection PyUnresolvedReferences
from imputer import main
