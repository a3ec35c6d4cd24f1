use mstar_demo::{frontiers, score_query, tie_rank};
use serde_json::Value;

fn ring(n: usize) -> String {
    (0..n)
        .map(|i| format!("n{i} next n{}\n", (i + 1) % n))
        .collect()
}

#[test]
fn documents_carry_the_fields_the_page_reads() {
    let g = ring(6);
    let f: Value = serde_json::from_str(&frontiers(&g, "n0", 1, 2).unwrap()).unwrap();
    for key in ["names", "edges", "head", "starting", "single", "multi"] {
        assert!(f.get(key).is_some(), "frontiers lacks {key}");
    }
    assert_eq!(f["single"].as_array().unwrap().len(), 3);

    let s: Value = serde_json::from_str(&score_query(&g, "n0", "next", 0, 0).unwrap()).unwrap();
    for key in [
        "names", "edges", "head", "scores", "starting", "types", "visited", "losses",
    ] {
        assert!(s.get(key).is_some(), "score_query lacks {key}");
    }

    let r: Value = serde_json::from_str(&tie_rank("2 2 2", 0, "").unwrap()).unwrap();
    assert_eq!(r["rank"], "2");
}

#[test]
fn frontier_sets_grow_monotonically() {
    let g = ring(9) + "x s n4\n";
    let f: Value = serde_json::from_str(&frontiers(&g, "n0", 2, 4).unwrap()).unwrap();
    for key in ["single", "multi"] {
        let layers = f[key].as_array().unwrap();
        for w in layers.windows(2) {
            let (a, b) = (w[0].as_array().unwrap(), w[1].as_array().unwrap());
            assert!(
                a.iter().all(|e| b.contains(e)),
                "{key}: {a:?} not within {b:?}"
            );
        }
    }
}
