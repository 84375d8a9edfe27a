mod common;

use std::collections::{BTreeMap, HashSet};

use common::fixture;
use proptest::prelude::*;
use vdesk_core::grounding::{
    aggregate, append_sample, area_buckets, group_table, load_dataset, load_predictions, score,
    score_all, AnnotatedClick, BBox, ClickType, GroundingError, GroundingResult, GroundingSample,
    PredictedPoint, Prediction, ScreenshotRef,
};

fn data(name: &str) -> std::path::PathBuf {
    fixture(&format!("fixtures/grounding/{name}"))
}

fn sample(id: usize, bbox: BBox, click: ClickType, platform: &str, app: &str) -> GroundingSample {
    GroundingSample {
        schema_version: 1,
        id: format!("s{id}"),
        instruction: "click it".into(),
        screenshot: ScreenshotRef {
            path: "x.png".into(),
            width: 64,
            height: 64,
        },
        action: AnnotatedClick {
            bbox,
            click_type: click,
        },
        platform: platform.into(),
        application: app.into(),
    }
}

fn click_type() -> impl Strategy<Value = ClickType> {
    prop_oneof![Just(ClickType::Single), Just(ClickType::Double), Just(ClickType::Right)]
}

fn small_bbox() -> impl Strategy<Value = BBox> {
    (0u32..32, 0u32..32, 1u32..=32, 1u32..=32).prop_map(|(x, y, w, h)| BBox { x, y, w, h })
}

#[test]
fn fixture_dataset_loads() {
    let samples = load_dataset(&data("dataset.jsonl")).unwrap();
    assert_eq!(samples.len(), 30);
    let platforms: HashSet<_> = samples.iter().map(|s| s.platform.as_str()).collect();
    assert_eq!(platforms.len(), 3);
}

#[test]
fn four_of_ten_is_forty_percent() {
    let samples = load_dataset(&data("dataset.jsonl")).unwrap();
    let preds = load_predictions(&data("predictions_ten.jsonl")).unwrap();
    let report = score_all(&samples, &preds).unwrap();
    assert_eq!(report.results.len(), 10);
    assert_eq!(report.unpredicted.len(), 20);
    let rows = aggregate(&report.results, &samples, &[]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].percent, "40.0");
    assert_eq!(rows[0].rate, 0.4);
}

#[test]
fn all_failures_give_all_zero_rows() {
    let samples = load_dataset(&data("dataset.jsonl")).unwrap();
    let preds = load_predictions(&data("predictions_zero.jsonl")).unwrap();
    let report = score_all(&samples, &preds).unwrap();
    assert!(report.unpredicted.is_empty());
    let rows = aggregate(&report.results, &samples, &["platform", "application"]).unwrap();
    let pairs: HashSet<_> = samples.iter().map(|s| (&s.platform, &s.application)).collect();
    assert_eq!(rows.len(), pairs.len());
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.percent == "0.0" && r.successes == 0));
    let table = group_table(&["platform", "application"], &rows);
    assert_eq!(table.lines().count(), 11);
}

#[test]
fn unknown_prediction_and_field() {
    let samples = load_dataset(&data("dataset.jsonl")).unwrap();
    let p = Prediction {
        id: "nope".into(),
        point: PredictedPoint { x: 0.0, y: 0.0 },
        click_type: ClickType::Single,
    };
    assert!(matches!(score_all(&samples, &[p]), Err(GroundingError::UnknownSample(_))));
    assert!(matches!(aggregate(&[], &samples, &["colour"]), Err(GroundingError::UnknownField(_))));
}

#[test]
fn appended_annotations_reload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.jsonl");
    let bbox = BBox { x: 60, y: 0, w: 4, h: 4 };
    append_sample(&path, &sample(1, bbox, ClickType::Right, "linux", "os")).unwrap();
    append_sample(&path, &sample(2, bbox, ClickType::Single, "linux", "os")).unwrap();
    assert!(matches!(
        append_sample(&path, &sample(2, bbox, ClickType::Single, "linux", "os")),
        Err(GroundingError::DuplicateId(_))
    ));
    let out = BBox { x: 61, ..bbox };
    assert!(matches!(
        append_sample(&path, &sample(3, out, ClickType::Single, "linux", "os")),
        Err(GroundingError::BBoxOutOfImage { .. })
    ));
    assert_eq!(load_dataset(&path).unwrap().len(), 2);
}

fn random_set() -> impl Strategy<Value = (Vec<GroundingSample>, Vec<Prediction>)> {
    let one = (
        0u32..40,
        0u32..40,
        1u32..=24,
        1u32..=24,
        click_type(),
        0usize..3,
        0usize..2,
        -2.0f64..66.0,
        -2.0f64..66.0,
        click_type(),
    );
    prop::collection::vec(one, 1..40).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (x, y, w, h, ct, p, a, px, py, pct))| {
                let s = sample(
                    i,
                    BBox { x, y, w, h },
                    ct,
                    ["linux", "windows", "macos"][p],
                    ["os", "browser"][a],
                );
                let pr = Prediction {
                    id: s.id.clone(),
                    point: PredictedPoint { x: px, y: py },
                    click_type: pct,
                };
                (s, pr)
            })
            .unzip()
    })
}

fn by_hand(results: &[GroundingResult], samples: &[GroundingSample], keep: impl Fn(&GroundingSample) -> bool) -> (usize, usize) {
    let mut n = 0;
    let mut ok = 0;
    for r in results {
        let s = samples.iter().find(|s| s.id == r.id).unwrap();
        if keep(s) {
            n += 1;
            ok += r.success as usize;
        }
    }
    (n, ok)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn location_matches_pixel_enumeration(
        bbox in small_bbox(),
        px in 0i64..72,
        py in 0i64..72,
        frac in prop_oneof![Just(0.0f64), 0.0f64..1.0],
        ct in click_type(),
        pct in click_type(),
    ) {
        let mut pixels = HashSet::new();
        for j in bbox.y..bbox.y + bbox.h {
            for i in bbox.x..bbox.x + bbox.w {
                pixels.insert((i as i64, j as i64));
            }
        }
        let s = sample(0, bbox, ct, "linux", "os");
        let p = Prediction {
            id: s.id.clone(),
            point: PredictedPoint { x: px as f64 + frac, y: py as f64 + frac },
            click_type: pct,
        };
        let r = score(&s, &p).unwrap();
        // A point belongs to the pixel whose cell [i, i+1) x [j, j+1) holds it.
        prop_assert_eq!(r.location_match, pixels.contains(&(px, py)));
        prop_assert_eq!(r.type_match, ct == pct);
        prop_assert_eq!(r.success, r.location_match && r.type_match);
    }
}

proptest! {
    #[test]
    fn aggregate_and_buckets_match_recount(
        (samples, preds) in random_set(),
        edges in prop::collection::btree_set(1u64..600, 1..4),
        seed in any::<u64>(),
    ) {
        let report = score_all(&samples, &preds).unwrap();
        let results = report.results;
        for r in &results {
            prop_assert_eq!(r.success, r.location_match && r.type_match);
        }

        let rows = aggregate(&results, &samples, &["platform", "application"]).unwrap();
        let mut expect = BTreeMap::new();
        for s in &samples {
            expect.entry(vec![s.platform.clone(), s.application.clone()]).or_insert(0usize);
        }
        prop_assert_eq!(rows.len(), expect.len());
        let mut weighted = 0.0;
        for row in &rows {
            let (n, ok) = by_hand(&results, &samples, |s| vec![s.platform.clone(), s.application.clone()] == row.group);
            prop_assert_eq!((row.n, row.successes), (n, ok));
            prop_assert_eq!(&row.percent, &format!("{:.1}", 100.0 * ok as f64 / n as f64));
            weighted += row.rate * row.n as f64;
        }
        let overall = aggregate(&results, &samples, &[]).unwrap();
        prop_assert!((overall[0].rate - weighted / results.len() as f64).abs() < 1e-12);

        let edges: Vec<u64> = edges.into_iter().collect();
        let buckets = area_buckets(&results, &samples, &edges).unwrap();
        prop_assert_eq!(buckets.len(), edges.len() + 1);
        for b in &buckets {
            let (n, ok) = by_hand(&results, &samples, |s| {
                let a = s.action.bbox.area();
                a >= b.lo && b.hi.is_none_or(|hi| a < hi)
            });
            prop_assert_eq!((b.n, b.successes), (n, ok));
        }
        prop_assert_eq!(buckets.iter().map(|b| b.n).sum::<usize>(), results.len());

        // Order independence.
        let mut shuffled = results.clone();
        let mut shuffled_samples = samples.clone();
        let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        rand::seq::SliceRandom::shuffle(shuffled_samples.as_mut_slice(), &mut rng);
        prop_assert_eq!(aggregate(&shuffled, &shuffled_samples, &["platform", "application"]).unwrap(), rows);
        prop_assert_eq!(area_buckets(&shuffled, &shuffled_samples, &edges).unwrap(), buckets);
    }
}
