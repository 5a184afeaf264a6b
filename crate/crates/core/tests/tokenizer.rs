use proptest::prelude::*;
use tcdst_core::corpus::{generate_synthetic, Schema};
use tcdst_core::tokenizer::{
    build_input_sequence, build_vocab, detokenize_span, tokenize, ModelVariant, Utterance, Variant,
    Vocabulary, CLS_ID, INTENT_ID, SEP_ID, SYS_ID, UNK_ID, USR_ID,
};
use tcdst_core::Error;

const WORDS: &[&str] = &[
    "the",
    "Ivy",
    "cheap",
    "hotel",
    "in",
    "Palo",
    "Alto",
    "?",
    "north",
    "i",
    "want",
    "to",
    "find_hotel",
    "4",
    "stars",
    "café",
    "moderate",
    ",",
    "zebra",
];

fn vocab(schema: &Schema) -> Vocabulary {
    build_vocab(&generate_synthetic(schema, 20, 1.0, 3).unwrap(), schema, 1).unwrap()
}

fn utterance() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (
            prop::sample::select(WORDS),
            prop::sample::select(&[" ", "  ", ""][..]),
        ),
        1..12,
    )
    .prop_map(|parts| {
        let s: String = parts
            .into_iter()
            .map(|(w, sep)| format!("{w}{sep} "))
            .collect();
        s.trim().to_string()
    })
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(&Variant::ALL[..])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sequence_layout_invariants(
        kind in variant(),
        window in 1usize..4,
        history in prop::collection::vec(utterance(), 0..4),
        user in utterance(),
        max_len in 8usize..48,
    ) {
        let schema = Schema::toy();
        let vocab = vocab(&schema);
        let history: Vec<Utterance> = history
            .into_iter()
            .enumerate()
            .map(|(i, t)| if i % 2 == 0 { Utterance::system(t) } else { Utterance::user(t) })
            .collect();
        let variant = ModelVariant { kind, history_window: window };
        let seq = build_input_sequence(&vocab, variant, &schema, &history, &user, max_len).unwrap();
        let again = build_input_sequence(&vocab, variant, &schema, &history, &user, max_len).unwrap();
        prop_assert_eq!(&seq, &again);

        let expected = usize::from(kind.conditions_on_intent())
            + if kind.conditions_on_categorical() { schema.num_categorical() } else { 0 };
        prop_assert_eq!(seq.num_conditioning_tokens(), expected);
        prop_assert_eq!(kind.num_conditioning_tokens(&schema), expected);
        prop_assert!(seq.len() <= max_len);
        prop_assert_eq!(seq.token_ids[0], CLS_ID);
        prop_assert_eq!(*seq.token_ids.last().unwrap(), SEP_ID);
        if let Some(i) = seq.intent_index {
            prop_assert_eq!(i, 1);
            prop_assert_eq!(seq.token_ids[i], INTENT_ID);
        }
        for (k, (key, pos)) in seq.categorical_indices.iter().flatten().enumerate() {
            prop_assert_eq!(*pos, 1 + usize::from(kind.conditions_on_intent()) + k);
            prop_assert_eq!(Some(seq.token_ids[*pos]), vocab.slot_token_id(key));
        }

        let user_toks = tokenize(&user).len();
        let usr = seq.token_ids.iter().rposition(|&t| t == USR_ID).unwrap();
        let kept_user = seq.len() - usr - 2;
        prop_assert!(kept_user >= 1);
        let room = max_len - 1 - expected - 2;
        prop_assert_eq!(kept_user, user_toks.min(room));
        if kept_user < user_toks {
            prop_assert!(!seq.token_ids.contains(&SYS_ID));
        }

        let mut sources: Vec<&str> = history.iter().map(|u| u.text.as_str()).collect();
        sources.push(&user);
        for i in 0..seq.len() {
            for j in i..seq.len() {
                let (Some(a), Some(b)) = (seq.alignment[i], seq.alignment[j]) else { continue };
                let text = detokenize_span(&seq, i, j, &sources);
                if a.utterance == b.utterance {
                    let text = text.unwrap();
                    prop_assert!(sources[a.utterance].contains(text.as_str()));
                } else {
                    prop_assert!(matches!(text, Err(Error::InvalidSpan(_))));
                }
            }
        }
    }

    #[test]
    fn tokens_cover_their_text(text in utterance()) {
        let chars: Vec<char> = text.chars().collect();
        for tok in tokenize(&text) {
            let s: String = chars[tok.start..tok.end].iter().collect();
            prop_assert_eq!(s.to_lowercase(), tok.text);
        }
    }
}

#[test]
fn baseline_layout_without_history() {
    let schema = Schema::toy();
    let vocab = vocab(&schema);
    let seq = build_input_sequence(
        &vocab,
        ModelVariant::new(Variant::Baseline),
        &schema,
        &[],
        "cheap hotel",
        16,
    )
    .unwrap();
    let ids = vec![
        CLS_ID,
        USR_ID,
        vocab.word_id("cheap"),
        vocab.word_id("hotel"),
        SEP_ID,
    ];
    assert_eq!(seq.token_ids, ids);
    assert_eq!(seq.segment_ids, vec![0, 1, 1, 1, 1]);
}

#[test]
fn capacity_boundary() {
    let schema = Schema::toy();
    let vocab = vocab(&schema);
    let v = ModelVariant::new(Variant::BdstJ);
    let smallest = 1 + 3 + 1 + 2;
    assert!(build_input_sequence(&vocab, v, &schema, &[], "cheap hotel", smallest).is_ok());
    assert!(matches!(
        build_input_sequence(&vocab, v, &schema, &[], "cheap hotel", smallest - 1),
        Err(Error::Capacity(_))
    ));
}

#[test]
fn vocabulary_json_round_trip_and_threshold() {
    let schema = Schema::toy();
    let v = vocab(&schema);
    let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
    assert_eq!(back.len(), v.len());
    assert_eq!(back.slot_keys(), v.slot_keys());
    for id in 0..v.len() as u32 {
        assert_eq!(back.token(id), v.token(id));
    }
    assert_eq!(v.word_id("zebra"), UNK_ID);
    assert!(v.slot_token_id("hotel-price").is_some());
    assert!(v.slot_token_id("hotel-name").is_none());
}

#[test]
fn span_over_history_words_keeps_original_casing() {
    let schema = Schema::toy();
    let vocab = vocab(&schema);
    let history = [Utterance::system("anything in Palo Alto?")];
    let user = "yes please";
    let seq = build_input_sequence(
        &vocab,
        ModelVariant::new(Variant::BdstI),
        &schema,
        &history,
        user,
        32,
    )
    .unwrap();
    let (s, e) = seq.token_span(0, 12, 21).unwrap();
    assert_eq!(
        detokenize_span(&seq, s, e, &[history[0].text.as_str(), user]).unwrap(),
        "Palo Alto"
    );
    let usr = seq.token_ids.iter().position(|&t| t == USR_ID).unwrap();
    assert!(matches!(
        detokenize_span(&seq, usr, usr + 1, &[history[0].text.as_str(), user]),
        Err(Error::InvalidSpan(_))
    ));
}
