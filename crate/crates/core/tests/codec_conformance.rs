use tdubench::codec::{decode, encode, Frame, RegisterMessage};

const GOLDEN: &str = include_str!("../fixtures/codec_golden.txt");

fn cases() -> impl Iterator<Item = (&'static str, &'static str)> {
    GOLDEN
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut cols = l.split('\t');
            (
                cols.next().unwrap(),
                cols.next().expect("expectation column"),
            )
        })
}

#[test]
fn golden_frames_decode_and_reencode() {
    let mut valid = 0;
    for (text, expected) in cases().filter(|(_, e)| !e.starts_with('!')) {
        let frame = Frame::from_candump(text).unwrap_or_else(|e| panic!("{text}: {e}"));
        let msg = decode(&frame).unwrap_or_else(|e| panic!("{text}: {e}"));
        let want: RegisterMessage = serde_json::from_str(expected).unwrap();
        assert_eq!(msg, want, "{text}");
        assert_eq!(encode(&want).unwrap().to_string(), text);
        valid += 1;
    }
    assert!(valid >= 10);
}

#[test]
fn golden_frames_fail_with_their_codes() {
    let mut invalid = 0;
    for (text, expected) in cases().filter(|(_, e)| e.starts_with('!')) {
        let code = match Frame::from_candump(text) {
            Err(e) => e.code(),
            Ok(frame) => match decode(&frame) {
                Err(e) => e.code(),
                Ok(msg) => panic!("{text} decoded to {msg:?}"),
            },
        };
        assert_eq!(code, &expected[1..], "{text}");
        invalid += 1;
    }
    assert!(invalid >= 5);
}
