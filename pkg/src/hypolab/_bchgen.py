"""Symbolic generator for the embedded BCH coefficient table.

Computes log(exp(a) exp(b)) in the free associative algebra on two letters
with exact rationals, then maps each word to its right-nested commutator via
the Dynkin-Specht-Wever projection.  Run as a module to regenerate
``_bch_table.py``::

    python -m hypolab._bchgen > src/hypolab/_bch_table.py
"""
from fractions import Fraction
from math import factorial


def _mul(x, y, depth):
    out = {}
    for u, cu in x.items():
        for v, cv in y.items():
            if len(u) + len(v) > depth:
                continue
            w = u + v
            out[w] = out.get(w, 0) + cu * cv
    return {w: c for w, c in out.items() if c}


def log_exp_exp(depth):
    """Word coefficients of log(e^a e^b), words of length 1..depth."""
    x = {}
    for p in range(depth + 1):
        for q in range(depth + 1 - p):
            if p + q:
                x["a" * p + "b" * q] = Fraction(1, factorial(p) * factorial(q))
    total = {}
    power = dict(x)
    for j in range(1, depth + 1):
        coef = Fraction((-1) ** (j + 1), j)
        for w, c in power.items():
            total[w] = total.get(w, 0) + coef * c
        power = _mul(power, x, depth)
    return {w: c for w, c in total.items() if c}


def generate_table(depth=6):
    """Right-nested bracket terms ``(word, coefficient)`` of the BCH series.

    The word ``"aab"`` stands for ``[a, [a, b]]``.  Words whose bracket is
    identically zero (last two letters equal) are dropped.
    """
    table = []
    for w, c in sorted(log_exp_exp(depth).items(), key=lambda t: (len(t[0]), t[0])):
        if len(w) > 1 and w[-1] == w[-2]:
            continue
        table.append((w, c / len(w)))
    return table


def main():
    print('"""Generated by ``python -m hypolab._bchgen``; do not edit."""')
    print("from fractions import Fraction")
    print()
    print("DEPTH = 6")
    print()
    print("BCH_TERMS = (")
    for w, c in generate_table(6):
        print(f'    ("{w}", Fraction({c.numerator}, {c.denominator})),')
    print(")")


if __name__ == "__main__":
    main()
