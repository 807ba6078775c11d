//! Informalization reply parsing against a hand-built ten-case table,
//! including headers embedded mid-line and surplus blank lines.

use procforge_core::corpus::{parse_informalization_reply, ReplyError};

#[test]
fn ten_case_reply_table() {
    let ok_cases: &[(&str, (&str, &str))] = &[
        ("# Problem: P\n# Proof: Q", ("P", "Q")),
        (
            "Intro text\n# Problem: What is 1+1?\n\n# Proof: It equals 2.",
            ("What is 1+1?", "It equals 2."),
        ),
        (
            "# Problem:\nMulti\nline\n# Proof:\nAlso\nmulti",
            ("Multi\nline", "Also\nmulti"),
        ),
        (
            "## Notes # Problem: inline question # Proof: inline answer",
            ("inline question", "inline answer"),
        ),
        (
            "# Problem: Q with # hash inside\n# Proof: A",
            ("Q with # hash inside", "A"),
        ),
        ("# Problem: \n# Proof: A", ("", "A")),
        (
            "# Problem: first # Problem: second\n# Proof: A",
            ("first # Problem: second", "A"),
        ),
        (
            "  \n\n# Problem:   spaced   \n\n\n# Proof:\n\n  trimmed  \n\n",
            ("spaced", "trimmed"),
        ),
    ];
    for (raw, (q, a)) in ok_cases {
        let (question, answer) = parse_informalization_reply(raw)
            .unwrap_or_else(|e| panic!("case {raw:?} failed: {e}"));
        assert_eq!((question.as_str(), answer.as_str()), (*q, *a), "case {raw:?}");
    }

    // headers out of order: the proof header must follow the problem header
    assert!(matches!(
        parse_informalization_reply("# Proof: A\n# Problem: Q"),
        Err(ReplyError::MalformedReply { missing: "# Proof:" })
    ));
    assert!(matches!(
        parse_informalization_reply("no headers"),
        Err(ReplyError::MalformedReply { missing: "# Problem:" })
    ));
}
