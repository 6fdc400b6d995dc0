use std::collections::BTreeSet;

use proptest::prelude::*;
use subbitext::catalog::{apply_filter, filter_report, DurationBound, DurationUnit, FilterSpec, MovieRecord};
use subbitext::corpus::final_clean;
use subbitext::dialogue::{clean_dialogue, pair_dialogues, Cleaner, DialoguePair};
use subbitext::lang::LangCode;
use subbitext::sentence::{match_sentences, split_sentences, Origin, SentencePair, SentenceRules, SplitPolicy, UnequalPolicy};
use subbitext::subtitle::{parse_srt, serialize_srt, shift_document, Cue, SubtitleDocument};
use subbitext::sync::{check_sync, match_cues, SyncPolicy};

fn lang(code: &str) -> LangCode {
    code.parse().unwrap()
}

fn text_line() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["hi", "سلام", "ça", "42", "it's", "ok?", "…", "-x-", "«»"]), 1..5)
        .prop_map(|w| w.join(" "))
}

fn cue_text() -> impl Strategy<Value = String> {
    prop::collection::vec(text_line(), 1..4).prop_map(|l| l.join("\n"))
}

fn document(code: &'static str) -> impl Strategy<Value = SubtitleDocument> {
    prop::collection::vec((0u64..20_000_000, 0u64..6_000, cue_text()), 0..30).prop_map(move |cues| {
        let cues = cues
            .into_iter()
            .enumerate()
            .map(|(i, (s, d, t))| Cue::new(i as u32 + 1, s, s + d, t))
            .collect();
        SubtitleDocument::new(lang(code), "tt1", cues)
    })
}

/// Timings only, on a coarse grid so that near-coincidences are common.
fn timings(code: &'static str) -> impl Strategy<Value = SubtitleDocument> {
    prop::collection::vec((0u64..400, 1u64..40), 0..25).prop_map(move |spans| {
        let cues = spans
            .into_iter()
            .enumerate()
            .map(|(i, (s, d))| Cue::new(i as u32 + 1, s * 50, (s + d) * 50, format!("c{i}")))
            .collect();
        SubtitleDocument::new(lang(code), "tt1", cues)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn srt_round_trip(doc in document("en")) {
        let parsed = parse_srt(&serialize_srt(&doc), lang("en"), "tt1").unwrap();
        prop_assert!(parsed.diagnostics.is_empty());
        prop_assert_eq!(parsed.document, doc.renumbered());
    }

    #[test]
    fn shift_round_trip_without_clamping(doc in document("en"), delta in 0i64..1_000_000) {
        let there = shift_document(&doc, delta);
        prop_assert_eq!(there.clamped, 0);
        let back = shift_document(&there.document, -delta);
        prop_assert_eq!(back.document, doc);
    }

    #[test]
    fn matching_is_monotone_and_within_tolerance(a in timings("en"), b in timings("fa"), tol in 0u64..400) {
        let m = match_cues(&a, &b, tol);
        for w in m.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
        }
        for &(i, j) in &m {
            let (x, y) = (&a.cues[i], &b.cues[j]);
            prop_assert!(x.start_ms.abs_diff(y.start_ms) <= tol && x.end_ms.abs_diff(y.end_ms) <= tol);
        }
    }

    #[test]
    fn matching_is_symmetric_in_count(a in timings("en"), b in timings("fa"), tol in 0u64..400) {
        prop_assert_eq!(match_cues(&a, &b, tol).len(), match_cues(&b, &a, tol).len());
        let policy = SyncPolicy { tolerance_ms: tol, ..SyncPolicy::default() };
        prop_assert_eq!(check_sync(&a, &b, &policy), check_sync(&b, &a, &policy));
    }

    #[test]
    fn match_count_grows_with_tolerance(a in timings("en"), b in timings("fa"), tol in 0u64..300, extra in 0u64..300) {
        let narrow = match_cues(&a, &b, tol).len();
        let wide = match_cues(&a, &b, tol + extra).len();
        prop_assert!(narrow <= wide, "{} matches at {} ms but {} at {} ms", narrow, tol, wide, tol + extra);
    }

    #[test]
    fn matching_is_maximum(a in timings("en"), b in timings("fa"), tol in 0u64..400) {
        // Longest common subsequence over the "qualifies" relation.
        let ok = |i: usize, j: usize| {
            let (x, y) = (&a.cues[i], &b.cues[j]);
            x.start_ms.abs_diff(y.start_ms) <= tol && x.end_ms.abs_diff(y.end_ms) <= tol
        };
        let (n, m) = (a.len(), b.len());
        let mut best = vec![vec![0usize; m + 1]; n + 1];
        for i in 1..=n {
            for j in 1..=m {
                let diag = if ok(i - 1, j - 1) { best[i - 1][j - 1] + 1 } else { 0 };
                best[i][j] = best[i - 1][j].max(best[i][j - 1]).max(diag);
            }
        }
        prop_assert_eq!(match_cues(&a, &b, tol).len(), best[n][m]);
    }

    #[test]
    fn self_match_is_complete(a in timings("en")) {
        prop_assert_eq!(match_cues(&a, &a, 0).len(), a.len());
    }
}

fn raw_cue() -> impl Strategy<Value = String> {
    let fragments = vec![
        "<i>", "</i>", "<font color=\"red\">", "{\\an8}", "[noise]", "(laughs)", "[", ")", "JOHN:", "- ", "–",
        "&amp;", "&lt;", "&#62;", "&nbsp;", "<", "}", "\n", "\t", "  ", " ", ":", "♪", "hello", "دنیا", "OK.", "…",
    ];
    prop::collection::vec(prop::sample::select(fragments), 0..16).prop_map(|f| f.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn cleaning_is_idempotent_and_clean(raw in raw_cue()) {
        let cleaner = Cleaner::default();
        let once = clean_dialogue(&raw, &cleaner);
        prop_assert_eq!(clean_dialogue(&once, &cleaner), once.clone());
        prop_assert!(!once.contains(['<', '>', '{', '}', '\t', '\n']), "markup left in {:?}", once);
        prop_assert!(!once.contains("  "));
        prop_assert_eq!(once.trim(), once.as_str());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pairing_respects_dialogue_invariants(texts in prop::collection::vec((raw_cue(), raw_cue()), 0..12)) {
        let spans: Vec<Cue> = (0..texts.len()).map(|i| Cue::new(i as u32 + 1, i as u64 * 1000, i as u64 * 1000 + 800, "")).collect();
        let with = |pick: fn(&(String, String)) -> &String, code| {
            let cues = spans.iter().zip(&texts).map(|(c, t)| Cue { text: pick(t).clone(), ..c.clone() }).collect();
            SubtitleDocument::new(lang(code), "tt1", cues)
        };
        let (a, b) = (with(|t| &t.0, "en"), with(|t| &t.1, "fa"));
        let matching = match_cues(&a, &b, 0);
        let pairs = pair_dialogues(&a, &b, &matching, &Cleaner::default());
        prop_assert!(pairs.len() <= matching.len());
        for w in pairs.windows(2) {
            prop_assert!(w[0].start_ms <= w[1].start_ms);
        }
        for p in &pairs {
            prop_assert!(!p.source_text.is_empty() && !p.target_text.is_empty());
            prop_assert!(p.start_ms <= p.end_ms);
        }
    }
}

fn record() -> impl Strategy<Value = MovieRecord> {
    (
        prop::option::of(prop::sample::select(vec!["movie", "episode"])),
        prop::option::of(1900i32..2030),
        prop::option::of(0u8..=100),
        prop::option::of(0u64..12_000),
        prop::collection::btree_set(prop::sample::select(vec!["Drama", "Comedy", "Action"]), 0..3),
    )
        .prop_map(|(t, year, rating, duration, genres)| MovieRecord {
            id: String::new(),
            title: "t".into(),
            year,
            media_type: t.map(String::from),
            rating: rating.map(|r| f64::from(r) / 10.0),
            rating_count: None,
            duration,
            genres: genres.into_iter().map(String::from).collect(),
        })
}

fn records() -> impl Strategy<Value = Vec<MovieRecord>> {
    prop::collection::vec(record(), 0..40).prop_map(|mut rs| {
        for (i, r) in rs.iter_mut().enumerate() {
            r.id = format!("tt{i}");
        }
        rs
    })
}

fn spec() -> impl Strategy<Value = FilterSpec> {
    (
        prop::option::of(prop::sample::select(vec!["movie", "episode"])),
        prop::option::of(1900i32..2030),
        prop::option::of(0u8..=100),
        prop::option::of((0u64..200, prop::bool::ANY)),
        prop::option::of(prop::collection::btree_set(prop::sample::select(vec!["Drama", "Comedy", "Action"]), 1..3)),
    )
        .prop_map(|(t, year, rating, duration, genres)| FilterSpec {
            type_limit: t.map(String::from),
            year_min: year,
            rating_min: rating.map(|r| f64::from(r) / 10.0),
            duration_min: duration.map(|(value, minutes)| DurationBound {
                value,
                unit: if minutes { DurationUnit::Minutes } else { DurationUnit::Seconds },
            }),
            genre_any: genres.map(|g| g.into_iter().map(String::from).collect::<BTreeSet<_>>()),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn filter_is_an_idempotent_subsequence(rs in records(), s in spec()) {
        let once = apply_filter(&rs, &s);
        prop_assert_eq!(apply_filter(&once, &s), once.clone());
        let mut rest = rs.iter();
        for kept in &once {
            prop_assert!(rest.any(|r| r == kept), "output is not a subsequence");
        }
    }

    #[test]
    fn filters_compose_as_conjunction(rs in records(), a in spec(), b in spec()) {
        let chained = apply_filter(&apply_filter(&rs, &a), &b);
        let both: Vec<MovieRecord> = rs.iter().filter(|r| a.admits(r) && b.admits(r)).cloned().collect();
        prop_assert_eq!(chained, both);
    }

    #[test]
    fn report_counts_never_grow(rs in records(), s in spec()) {
        let report = filter_report(&rs, &s);
        prop_assert_eq!(report[0].count, rs.len());
        prop_assert_eq!(report.last().unwrap().count, apply_filter(&rs, &s).len());
        for w in report.windows(2) {
            prop_assert!(w[0].count >= w[1].count);
        }
    }
}

fn sentences(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        (prop::sample::select(vec!["Go", "No way", "Mr. Smith is here", "کجا", "Wait"]), prop::sample::select(vec![".", "!", "?", "...", "؟"])),
        1..=max,
    )
    .prop_map(|v| v.into_iter().map(|(w, t)| format!("{w}{t}")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn sentence_pair_counts(src in sentences(5), dst in sentences(5), prefix in prop::bool::ANY) {
        let rules = SentenceRules::target_default();
        let policy = SplitPolicy {
            source: rules.clone(),
            target: rules.clone(),
            unequal_policy: if prefix { UnequalPolicy::Prefix } else { UnequalPolicy::Skip },
        };
        let pair = DialoguePair {
            video_id: "tt1".into(),
            start_ms: 7,
            end_ms: 9,
            source_text: src.join(" "),
            target_text: dst.join(" "),
            source_lang: lang("en"),
            target_lang: lang("fa"),
        };
        prop_assert_eq!(split_sentences(&pair.source_text, &rules), src.clone());
        let out = match_sentences(&pair, &policy);
        let expected = if src.len() == dst.len() { src.len() } else if prefix { src.len().min(dst.len()) } else { 0 };
        prop_assert_eq!(out.len(), expected);
        for (k, p) in out.iter().enumerate() {
            prop_assert_eq!(&p.source_text, &src[k]);
            prop_assert_eq!(&p.target_text, &dst[k]);
            prop_assert_eq!(p.origin.ordinal as usize, k);
        }
    }

    #[test]
    fn final_clean_is_idempotent(s in "[ a-z\\n\\r\\t.!…]{0,12}", t in "[ ا-ی\\n.؟]{0,12}") {
        let pair = SentencePair {
            video_id: "tt1".into(),
            source_text: s,
            target_text: t,
            origin: Origin { start_ms: 0, ordinal: 0 },
        };
        if let Some(clean) = final_clean(&pair) {
            prop_assert_eq!(final_clean(&clean), Some(clean.clone()));
            for side in [&clean.source_text, &clean.target_text] {
                prop_assert!(side.chars().any(char::is_alphanumeric));
                prop_assert!(!side.contains(['\n', '\r']) && !side.contains("  "));
            }
        }
    }
}
