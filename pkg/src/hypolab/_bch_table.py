"""Generated by ``python -m hypolab._bchgen``; do not edit."""
from fractions import Fraction

DEPTH = 6

BCH_TERMS = (
    ("a", Fraction(1, 1)),
    ("b", Fraction(1, 1)),
    ("ab", Fraction(1, 4)),
    ("ba", Fraction(-1, 4)),
    ("aab", Fraction(1, 36)),
    ("aba", Fraction(-1, 18)),
    ("bab", Fraction(-1, 18)),
    ("bba", Fraction(1, 36)),
    ("abab", Fraction(-1, 48)),
    ("baba", Fraction(1, 48)),
    ("aaaab", Fraction(-1, 3600)),
    ("aaaba", Fraction(1, 900)),
    ("aabab", Fraction(-1, 600)),
    ("aabba", Fraction(-1, 600)),
    ("abaab", Fraction(-1, 600)),
    ("ababa", Fraction(1, 150)),
    ("abbab", Fraction(-1, 600)),
    ("abbba", Fraction(1, 900)),
    ("baaab", Fraction(1, 900)),
    ("baaba", Fraction(-1, 600)),
    ("babab", Fraction(1, 150)),
    ("babba", Fraction(-1, 600)),
    ("bbaab", Fraction(-1, 600)),
    ("bbaba", Fraction(-1, 600)),
    ("bbbab", Fraction(1, 900)),
    ("bbbba", Fraction(-1, 3600)),
    ("aaabab", Fraction(1, 2160)),
    ("aabaab", Fraction(-1, 1440)),
    ("aabbab", Fraction(-1, 1440)),
    ("abaaab", Fraction(1, 2160)),
    ("ababab", Fraction(1, 360)),
    ("abbaab", Fraction(-1, 1440)),
    ("abbbab", Fraction(1, 2160)),
    ("baaaba", Fraction(-1, 2160)),
    ("baabba", Fraction(1, 1440)),
    ("bababa", Fraction(-1, 360)),
    ("babbba", Fraction(-1, 2160)),
    ("bbaaba", Fraction(1, 1440)),
    ("bbabba", Fraction(1, 1440)),
    ("bbbaba", Fraction(-1, 2160)),
)
