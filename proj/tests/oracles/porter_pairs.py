"""word<TAB>stem pairs from NLTK's Porter stemmer in ORIGINAL_ALGORITHM mode.

usage: python3 porter_pairs.py WORDS.txt > porter_pairs.tsv
"""

import sys

from nltk.stem.porter import PorterStemmer


def main():
    stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)
    words = sorted({w.strip() for w in open(sys.argv[1]) if w.strip()})
    for word in words:
        # The reference C implementation never touches words of one or two
        # letters; NLTK does ("as" -> "a"), so those are left out.
        if len(word) >= 3 and word.isascii() and word.isalpha() and word.islower():
            sys.stdout.write(f"{word}\t{stemmer.stem(word)}\n")


if __name__ == "__main__":
    main()
