# levenshtein.py
# ~~~~~~~~~~~~~~
# unit-cost edit distance, used to disambiguate canonical class names

def levenshtein(a, b):
    """
    Levenshtein distance between `a` and `b`: the minimum number of
    single-character insertions, deletions and substitutions turning one
    into the other. Case-sensitive; 0 iff a == b.
    """
    if a == b:
        return 0
    # keep the shorter string on the row axis
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)

    previous = list(range(len(b) + 1))
    for i, char_a in enumerate(a, 1):
        current = [i]
        for j, char_b in enumerate(b, 1):
            cost = 0 if char_a == char_b else 1
            current.append(min(current[j - 1] + 1,
                               previous[j] + 1,
                               previous[j - 1] + cost))
        previous = current
    return previous[-1]
