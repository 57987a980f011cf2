import re
from functools import lru_cache

from nltk.stem.porter import PorterStemmer

_SPLIT = re.compile(r"[^\W_]+", re.UNICODE)
_stemmer = PorterStemmer()


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _SPLIT.findall(text.lower())


@lru_cache(maxsize=1 << 18)
def stem(token: str) -> str:
    return _stemmer.stem(token)


def analyze(text: str) -> list[str]:
    """Tokenize then Porter-stem; the lexical index's analyzer."""
    return [stem(t) for t in tokenize(text)]
