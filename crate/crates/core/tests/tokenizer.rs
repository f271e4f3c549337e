use mirror_core::tokenizer::{pretokenize, Tokenizer};
use proptest::prelude::*;

/// A small byte-complete BPE vocabulary with a handful of merges, so that
/// round trips exercise merging as well as single bytes.
fn merged_tokenizer() -> Tokenizer {
    let table = mirror_core::tokenizer::bytes_to_unicode();
    let mut vocab: Vec<(String, u32)> = (0..256u32).map(|b| (table[b as usize].to_string(), b)).collect();
    let merges: Vec<(String, String)> = [("t", "h"), ("th", "e"), ("Ġ", "the"), ("e", "r"), ("i", "n"), ("Ġ", "a")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    for (a, b) in &merges {
        let id = vocab.len() as u32;
        vocab.push((format!("{a}{b}"), id));
    }
    let id = vocab.len() as u32;
    vocab.push(("<|endoftext|>".into(), id));
    Tokenizer::new(vocab, merges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ascii_round_trip(s in "[ -~\t\n]{0,60}") {
        let t = merged_tokenizer();
        let ids = t.encode(&s).unwrap();
        prop_assert_eq!(t.decode(&ids).unwrap(), s.clone());
        let b = Tokenizer::byte_level();
        prop_assert_eq!(b.decode(&b.encode(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn pieces_concatenate_back(s in "\\PC{0,40}") {
        prop_assert_eq!(pretokenize(&s).concat(), s);
    }

    #[test]
    fn unicode_round_trip(s in "\\PC{0,30}") {
        let t = merged_tokenizer();
        prop_assert_eq!(t.decode(&t.encode(&s).unwrap()).unwrap(), s);
    }
}

#[test]
fn merges_apply() {
    let t = merged_tokenizer();
    let the = t.token_to_id("Ġthe").unwrap();
    assert_eq!(t.encode(" the").unwrap(), vec![the]);
    assert_eq!(t.decode(&[t.end_of_text().unwrap()]).unwrap(), "<|endoftext|>");
}

/// Runs against the public GPT-2 assets when `MIRROR_GPT2_ASSETS` names a
/// directory holding `vocab.json` and `merges.txt`.
#[test]
fn standard_gpt2_assets() {
    let Ok(dir) = std::env::var("MIRROR_GPT2_ASSETS") else {
        eprintln!("MIRROR_GPT2_ASSETS not set; skipping");
        return;
    };
    let dir = std::path::Path::new(&dir);
    let t = Tokenizer::from_assets(
        &std::fs::read(dir.join("vocab.json")).unwrap(),
        &std::fs::read(dir.join("merges.txt")).unwrap(),
    )
    .unwrap();
    assert_eq!(t.vocab_size(), 50257);
    assert_eq!(t.encode("hello").unwrap(), vec![31373]);
    assert_eq!(t.end_of_text(), Some(50256));
}
