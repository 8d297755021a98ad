use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vinecast::baselines::{fit_gbdt, BinaryClassifier, ClassWeights, GbdtParams};
use vinecast::eval::generate_vineyard_like;
use vinecast::geomap::{aggregate_blocks, demo_grid, predict_grid, render_rgba, Colormap, PixelGrid, ProbabilityRaster};
use vinecast::numerics::Tensor;
use vinecast::pfn::{PfnClassifier, PfnConfig, PfnWeights};

fn f32_rows(seed: u64, n: usize, f: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![n, f], (0..n * f).map(|_| rng.random_range(-3.0f32..3.0) as f64).collect()).unwrap()
}

fn labels(x: &Tensor<f64>) -> Vec<usize> {
    (0..x.shape()[0]).map(|i| usize::from(x.at(i, 0) + 0.5 * x.at(i, 1) > 0.0)).collect()
}

fn names(f: usize) -> Vec<String> {
    (0..f).map(|j| format!("f{j}")).collect()
}

fn assert_grid_matches_table(model: &dyn BinaryClassifier, rows: &Tensor<f64>, w: usize, h: usize) {
    let grid = PixelGrid::from_rows(rows, w, h, names(rows.shape()[1])).unwrap();
    let raster = predict_grid(model, &grid, None).unwrap();
    let table = model.predict_proba(rows).unwrap();
    let a: Vec<u64> = raster.probs.iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = table.iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn grid_predictions_equal_tabular_predictions() {
    let train = f32_rows(1, 80, 3);
    let y = labels(&train);
    let test = f32_rows(2, 60, 3);
    let gbdt = fit_gbdt(&train, &y, &GbdtParams { n_rounds: 20, ..GbdtParams::default() }, ClassWeights::default()).unwrap();
    assert_grid_matches_table(&gbdt, &test, 10, 6);
    let config = PfnConfig { n_layers: 1, emb_dim: 16, n_heads: 2, ff_dim: 32, max_features: 4, max_classes: 2, dropout: 0.0 };
    let weights = PfnWeights::<f32>::init(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let pfn = PfnClassifier::new(&weights, train, y, 3).unwrap();
    assert_grid_matches_table(&pfn, &test, 6, 10);
    assert_grid_matches_table(&pfn, &f32_rows(4, 1, 3), 1, 1);
}

#[test]
fn masked_pixels_stay_masked() {
    let train = f32_rows(5, 40, 2);
    let y = labels(&train);
    let model = fit_gbdt(&train, &y, &GbdtParams::default(), ClassWeights::default()).unwrap();
    let mut grid = PixelGrid::from_rows(&f32_rows(6, 12, 2), 4, 3, names(2)).unwrap();
    grid.nodata = vec![true; 12];
    let raster = predict_grid(&model, &grid, None).unwrap();
    assert!(raster.probs.iter().all(|p| p.is_nan()));
    assert!(render_rgba(&raster, &Colormap::default()).chunks(4).all(|px| px[3] == 0));
    grid.nodata[5] = false;
    let narrow = PixelGrid { feature_names: names(1), planes: grid.planes[..12].to_vec(), ..grid.clone() };
    assert!(predict_grid(&model, &narrow, None).unwrap_err().to_string().contains("expects 2"));
}

#[test]
fn demo_grid_round_trips_and_masks_lanes() {
    let data = generate_vineyard_like(0, 60, 12).unwrap();
    let grid = demo_grid(&data, 1, 20, 15, 2, 2).unwrap();
    assert_eq!(PixelGrid::from_bytes(&grid.to_bytes()).unwrap().to_bytes(), grid.to_bytes());
    assert!(grid.planes.iter().all(|v| v.is_finite()));
    assert!(grid.nodata.iter().any(|&m| m) && grid.nodata.iter().any(|&m| !m));
    assert_eq!(demo_grid(&data, 1, 20, 15, 2, 2).unwrap().to_bytes(), grid.to_bytes());
}

proptest! {
    #[test]
    fn colour_ramp_is_monotone(p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let c = Colormap::default();
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        let (a, b) = (c.color(lo), c.color(hi));
        prop_assert!(a[0] <= b[0] && a[1] <= b[1]);
        prop_assert_eq!((a[2], b[2]), (0, 0));
    }

    #[test]
    fn aggregation_ignores_pixel_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..60);
        let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let nodata: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let ids: Vec<u32> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let raster = ProbabilityRaster { width: n, height: 1, probs: probs.clone(), nodata: nodata.clone() };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let shuffled = ProbabilityRaster {
            width: n,
            height: 1,
            probs: order.iter().map(|&i| probs[i]).collect(),
            nodata: order.iter().map(|&i| nodata[i]).collect(),
        };
        let ids2: Vec<u32> = order.iter().map(|&i| ids[i]).collect();
        let a = aggregate_blocks(&raster, &ids).unwrap();
        prop_assert_eq!(&a, &aggregate_blocks(&shuffled, &ids2).unwrap());
        let live: std::collections::BTreeSet<u32> = ids.iter().zip(&nodata).filter(|(_, &m)| !m).map(|(&b, _)| b).collect();
        prop_assert_eq!(a.len(), live.len());
    }
}

#[test]
fn checkerboard_block_averages_to_one_half() {
    let probs: Vec<f64> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
    let raster = ProbabilityRaster { width: 4, height: 4, probs, nodata: vec![false; 16] };
    assert_eq!(aggregate_blocks(&raster, &[7; 16]).unwrap()[0].mean_probability, 0.5);
}
