"""Annotated pull-request and issue cases for the merge and bug heuristics."""

from builders import sha

# source history: three known commits plus messages that may close pull requests
HISTORY_SHAS = [
    "abc1234" + sha("h1")[7:],
    "deadbeef" + sha("h2")[8:],
    "0123456" + sha("h3")[7:],
]
FULL_SHA = HISTORY_SHAS[2]
HISTORY_MESSAGES = [
    "Fixes #12",
    "Tidy up; closes #13",
    "Resolved: #14",
    "FIXES #17 and cleans up",
    "resolves #18",
    "fixed #19",
    "close #20",
    "refs #21",
    "prefix #22",
    "fixes #230",
    "fixing #24",
]

# (pr_id, merged_action, last_comments, expected reason)
MERGE_CASES = [
    (1, True, [], "forge_merged_action"),
    (2, True, ["cherry-picked as abc1234"], "forge_merged_action"),
    (12, False, [], "closing_commit_phrase"),
    (13, False, [], "closing_commit_phrase"),
    (14, False, [], "closing_commit_phrase"),
    (17, False, [], "closing_commit_phrase"),
    (18, False, [], "closing_commit_phrase"),
    (19, False, [], "closing_commit_phrase"),
    (20, False, [], "closing_commit_phrase"),
    (40, False, ["Thanks, cherry-picked as abc1234"], "comment_commit_reference"),
    (41, False, ["Squashed and merged in deadbeef"], "comment_commit_reference"),
    (42, False, ["Landing this as 0123456"], "comment_commit_reference"),
    (43, False, ["cherry picked into master as abc1234"], "comment_commit_reference"),
    (44, False, ["Applied in ABC1234, thanks"], "comment_commit_reference"),
    (45, False, [f"pushed {FULL_SHA}"], "comment_commit_reference"),
    (46, False, ["integrated as deadbee", "ping", "closing for now"], "comment_commit_reference"),
    (47, False, ["pulled into 0123456"], "comment_commit_reference"),
    (50, False, ["won't fix"], "not_merged"),
    (51, False, ["I merged this into a release branch"], "not_merged"),
    (52, False, ["See abc1234 for context"], "not_merged"),
    (53, False, ["merged as 9999999"], "not_merged"),
    (21, False, [], "not_merged"),
    (22, False, [], "not_merged"),
    (23, False, [], "not_merged"),
    (24, False, [], "not_merged"),
    (54, False, ["merge abc1234 please"], "not_merged"),
    (55, False, ["cherry-picked as abc123"], "not_merged"),
    (56, False, ["cherry-picked as abc1234x"], "not_merged"),
]

# (title, labels, expected)
BUG_CASES = [
    ("Errors when parsing config", [], True),
    ("Crash on startup", ["bug"], True),
    ("Add dark mode", [], False),
    ("Defect in renderer", [], True),
    ("Crash: fault in allocator", [], True),
    ("Flaw in auth flow", [], True),
    ("Incorrect totals on report", [], True),
    ("Mistakes in the tutorial", [], True),
    ("Small mistake in README", [], True),
    ("Issue with login", [], True),
    ("Issues on Windows", [], True),
    ("BUG: crash on exit", [], True),
    ("bugs everywhere", [], True),
    ("Error-prone API", [], True),
    ("Errored jobs never retried", [], True),
    ("Weird behaviour", ["type: bug"], True),
    ("Debugging guide", [], False),
    ("Buggy behaviour", [], False),
    ("Faulty sensor reading", [], False),
    ("Feature: export to CSV", ["enhancement"], False),
    ("Typo in docs", ["documentation"], False),
    ("Correct the spelling", [], False),
    ("Flawless build on CI", [], False),
]
