use serde::{Deserialize, Serialize};
use subbitext::lang::LangCode;
use subbitext::store::{Payload, Store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Event {
    n: u64,
    text: String,
}

impl Payload for Event {
    const FILE: &'static str = "events";
}

fn event(n: u64) -> Event {
    Event { n, text: format!("event {n} «{}»", "é".repeat((n % 5) as usize)) }
}

fn open(dir: &std::path::Path) -> Store {
    Store::open(dir, &"en".parse::<LangCode>().unwrap(), &"fa".parse::<LangCode>().unwrap()).unwrap()
}

fn read_all(store: &Store) -> (Vec<Event>, bool) {
    let mut scan = store.scan::<Event>().unwrap();
    let events = (&mut scan).map(|r| r.unwrap().payload).collect();
    (events, scan.truncation().is_some())
}

/// Byte offsets at which each record line ends (after its newline).
fn line_ends(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i + 1).collect()
}

#[test]
fn every_truncation_point_yields_the_complete_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let store = open(dir.path());
    let mut writer = store.append::<Event>("run").unwrap();
    for n in 1..=6 {
        writer.append(&event(n)).unwrap();
    }
    writer.finish().unwrap();
    let path = store.dir().join("events.jsonl");
    let full = std::fs::read(&path).unwrap();
    let ends = line_ends(&full);

    for cut in 0..=full.len() {
        std::fs::write(&path, &full[..cut]).unwrap();
        let complete_records = ends.iter().filter(|&&e| e <= cut).count().saturating_sub(1);
        let (events, torn) = read_all(&store);
        assert_eq!(events, (1..=complete_records as u64).map(event).collect::<Vec<_>>(), "cut at {cut}");
        assert_eq!(torn, !ends.contains(&cut) && cut > 0, "cut at {cut}");

        // Appending after a torn write continues the sequence cleanly.
        let mut writer = store.append::<Event>("resume").unwrap();
        let id = writer.append(&event(99)).unwrap();
        writer.finish().unwrap();
        assert_eq!(id, complete_records as u64 + 1, "cut at {cut}");
        let (events, torn) = read_all(&store);
        assert!(!torn, "cut at {cut}");
        assert_eq!(events.last(), Some(&event(99)));
        assert_eq!(events.len(), complete_records + 1);
    }
}

#[test]
fn garbage_after_valid_records() {
    let dir = tempfile::tempdir().unwrap();
    let store = open(dir.path());
    let mut writer = store.append::<Event>("run").unwrap();
    for n in 1..=3 {
        writer.append(&event(n)).unwrap();
    }
    writer.finish().unwrap();
    let path = store.dir().join("events.jsonl");
    for garbage in [&b"\0\0\0\0"[..], b"{\"id\":9}\n", b"not json\n{\"id\":4}\n", b"\xff\xfe\n"] {
        let mut bytes = std::fs::read(&path).unwrap();
        let valid = bytes.len();
        bytes.extend_from_slice(garbage);
        std::fs::write(&path, &bytes).unwrap();
        let mut scan = store.scan::<Event>().unwrap();
        let events: Vec<Event> = (&mut scan).map(|r| r.unwrap().payload).collect();
        assert_eq!(events, (1..=3).map(event).collect::<Vec<_>>());
        assert_eq!(scan.truncation().unwrap().offset, valid as u64);
        std::fs::write(&path, &bytes[..valid]).unwrap();
    }
}

#[test]
fn ten_thousand_records_even_filter() {
    let dir = tempfile::tempdir().unwrap();
    let store = open(dir.path());
    let mut writer = store.append::<Event>("run").unwrap();
    let ids: Vec<u64> = (1..=10_000).map(|n| writer.append(&event(n)).unwrap()).collect();
    writer.finish().unwrap();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    let evens: Vec<u64> = store
        .scan_where::<Event>(|r| r.payload.n % 2 == 0)
        .unwrap()
        .map(|r| r.unwrap().payload.n)
        .collect();
    assert_eq!(evens.len(), 5_000);
    assert!(evens.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn readers_never_see_partial_records_while_writing() {
    let dir = tempfile::tempdir().unwrap();
    let store = open(dir.path());
    std::thread::scope(|s| {
        s.spawn(|| {
            let mut writer = store.append::<Event>("run").unwrap().with_batch_size(7);
            for n in 1..=3_000 {
                writer.append(&event(n)).unwrap();
            }
            writer.finish().unwrap();
        });
        for _ in 0..50 {
            for (rec, n) in store.scan::<Event>().unwrap().zip(1..) {
                assert_eq!(rec.unwrap().payload, event(n));
            }
        }
    });
    assert_eq!(read_all(&store).0.len(), 3_000);
}
