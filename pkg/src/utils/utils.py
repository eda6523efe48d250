# utils.py

import sys
import shutil
import datetime

# print term width horizontal line (stderr; stdout is reserved for results)
def hz_line(character='-'):
    terminal_width = shutil.get_terminal_size().columns
    line = character * terminal_width
    print(line, file=sys.stderr)
    sys.stderr.flush()

# print the startup message
def print_startup_message(version_number, command):
    now = datetime.datetime.now().strftime('%Y-%m-%d %H:%M:%S')
    hz_line()
    print(f"[{now}] Q&A post recommender v.{version_number} running `{command}`...", file=sys.stderr, flush=True)
    hz_line()

def format_contributions(contributions):
    """`Field: term^boost -> contribution` lines for an explained hit."""
    lines = []
    for clause, contribution in contributions:
        lines.append(f"{clause.to_text()} -> {contribution:.6f}")
    return '\n'.join(lines)
