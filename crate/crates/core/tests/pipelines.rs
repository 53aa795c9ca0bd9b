use dcc::dataset::{load_csv, make_blobs, make_rings, write_csv, CsvOptions, Dataset, LabelColumn};
use dcc::metrics::clustering_accuracy;
use dcc::pipelines::{kasp, rasp, rpfcluster_plus, run, Method, MethodConfig};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn accuracy(data: &Dataset, labels: &[usize]) -> f64 {
    clustering_accuracy(data.labels().unwrap(), labels).unwrap().accuracy
}

fn blobs(seed: u64) -> Dataset {
    make_blobs(30_000, 10, 3, 8.0, seed).unwrap()
}

#[test]
fn rpfcluster_plus_recovers_blobs_with_defaults() {
    let accs: Vec<f64> = (0..10)
        .map(|seed| {
            let data = blobs(seed);
            let cfg = MethodConfig {
                seed,
                ..MethodConfig::new(Method::RpfclusterPlus, 3)
            };
            accuracy(&data, &rpfcluster_plus(&data, &cfg).unwrap().labels)
        })
        .collect();
    assert!(median(accs.clone()) >= 0.95, "{accs:?}");
}

#[test]
fn rpfcluster_plus_separates_rings_where_kmeans_cannot() {
    let mut rpf = Vec::new();
    let mut km = Vec::new();
    for seed in 0..5 {
        let data = make_rings(4000, &[1.0, 5.0], 0.1, seed).unwrap();
        let cfg = MethodConfig {
            beta: 0.05,
            seed,
            ..MethodConfig::new(Method::RpfclusterPlus, 2)
        };
        rpf.push(accuracy(&data, &run(&data, &cfg).unwrap().labels));
        let cfg = MethodConfig {
            seed,
            ..MethodConfig::new(Method::Kmeans, 2)
        };
        km.push(accuracy(&data, &run(&data, &cfg).unwrap().labels));
    }
    assert!(median(rpf.clone()) >= 0.90, "{rpf:?}");
    assert!(median(km.clone()) <= 0.75, "{km:?}");
}

#[test]
fn partition_count_barely_moves_accuracy() {
    let medians: Vec<f64> = [1, 2, 4]
        .into_iter()
        .map(|n_p| {
            median(
                (0..6)
                    .map(|seed| {
                        let data = blobs(seed);
                        let cfg = MethodConfig {
                            n_p,
                            trees: 200,
                            seed,
                            ..MethodConfig::new(Method::RpfclusterPlus, 3)
                        };
                        accuracy(&data, &run(&data, &cfg).unwrap().labels)
                    })
                    .collect(),
            )
        })
        .collect();
    let spread = medians.iter().cloned().fold(f64::MIN, f64::max) - medians.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.03, "{medians:?}");
}

#[test]
fn baselines_track_rpfcluster_plus_on_blobs() {
    let mut by_method = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..5 {
        let data = blobs(seed);
        let cfg = MethodConfig {
            trees: 200,
            target_signatures: 500,
            sigma: 2.0,
            seed,
            ..MethodConfig::new(Method::RpfclusterPlus, 3)
        };
        by_method[0].push(accuracy(&data, &rpfcluster_plus(&data, &cfg).unwrap().labels));
        by_method[1].push(accuracy(&data, &kasp(&data, &cfg).unwrap().labels));
        by_method[2].push(accuracy(&data, &rasp(&data, &cfg).unwrap().labels));
    }
    let [rpf, kasp, rasp] = by_method.map(median);
    assert!((kasp - rpf).abs() <= 0.05, "kasp {kasp} rpf+ {rpf}");
    assert!((rasp - kasp).abs() <= 0.05, "rasp {rasp} kasp {kasp}");
}

#[test]
fn csv_round_trip_feeds_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blobs.csv");
    let data = make_blobs(600, 3, 3, 8.0, 11).unwrap();
    write_csv(&data, &path).unwrap();
    let loaded = load_csv(
        &path,
        &CsvOptions {
            label_column: Some(LabelColumn::Name("label".into())),
            standardize: false,
        },
    )
    .unwrap();
    assert!(loaded.dropped_lines.is_empty());
    assert_eq!(loaded.dataset.len(), 600);
    assert_eq!(loaded.dataset.labels(), data.labels());
    let cfg = MethodConfig {
        trees: 100,
        target_signatures: 150,
        seed: 11,
        ..MethodConfig::new(Method::RpfclusterPlus, 3)
    };
    let a = run(&data, &cfg).unwrap().labels;
    let b = run(&loaded.dataset, &cfg).unwrap().labels;
    assert_eq!(a, b);
}
