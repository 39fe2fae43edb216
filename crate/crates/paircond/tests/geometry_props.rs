use paircond::geometry::{cutoff_eta, dilate, distance_field, distance_field_brute, erode, DomainMask};
use paircond::grid::Grid;
use proptest::prelude::*;

fn random_mask(dim: usize, n: usize, bits: &[bool]) -> Option<DomainMask> {
    let grid = Grid::cube(dim, 0.0, 1.0, n).unwrap();
    let inside = (0..grid.len()).map(|k| bits[k % bits.len()]).collect();
    let m = DomainMask::from_inside(&grid, inside, None).ok()?;
    (m.count() > 0).then_some(m)
}

/// Smallest distance from node `k` to an interior node of `m`.
fn distance_to(m: &DomainMask, k: usize) -> f64 {
    let g = m.grid();
    m.nodes().into_iter().map(|j| g.distance(j, k)).fold(f64::INFINITY, f64::min)
}

fn convex_mask(dim: usize, n: usize, c: f64, r: f64, square: bool) -> DomainMask {
    let grid = Grid::cube(dim, -1.0, 2.0, n).unwrap();
    if square {
        DomainMask::open_box(&grid, &vec![c - r; dim], &vec![c + r; dim]).unwrap()
    } else {
        DomainMask::disk(&grid, &vec![c; dim], r).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fast_and_brute_distance_agree(
        dim in 1usize..=2,
        n in 4usize..=64,
        bits in proptest::collection::vec(proptest::bool::weighted(0.7), 1..97),
    ) {
        if let Some(m) = random_mask(dim, n, &bits) {
            let fast = distance_field(&m).unwrap();
            let brute = distance_field_brute(&m).unwrap();
            prop_assert_eq!(fast.values, brute.values);
        }
    }

    #[test]
    fn erode_dilate_duality(
        dim in 1usize..=2,
        n in 31usize..=61,
        c in 0.3f64..0.7,
        r in 0.25f64..0.6,
        ell in 0.02f64..0.2,
        square in any::<bool>(),
    ) {
        let m = convex_mask(dim, n, c, r, square);
        let cell = m.grid().max_spacing() * (dim as f64).sqrt();
        let opened = dilate(&erode(&m, ell).unwrap(), ell);
        if let Ok(opened) = opened {
            for k in opened.nodes() {
                if !m.is_inside(k) {
                    prop_assert!(distance_to(&m, k) <= cell + 1e-12);
                }
            }
        }
        let closed = erode(&dilate(&m, ell).unwrap(), ell).unwrap();
        for k in m.nodes() {
            if !closed.is_inside(k) {
                prop_assert!(m.dist()[k] <= cell + 1e-12, "{} {}", m.dist()[k], cell);
            }
        }
    }

    #[test]
    fn eta_gradient_band(
        dim in 1usize..=2,
        n in 31usize..=61,
        r in 0.3f64..0.6,
        ell in 0.03f64..0.12,
    ) {
        let m = convex_mask(dim, n, 0.5, r, false);
        let eta = cutoff_eta(&m, ell).unwrap();
        let g = m.grid();
        let dx = g.max_spacing();
        let st = g.strides();
        for k in 0..g.len() {
            let idx = g.multi_index(k);
            for a in 0..dim {
                if idx[a] + 1 < g.n()[a] {
                    let j = k + st[a];
                    if eta.values[j] != eta.values[k] {
                        // forward difference lives on the edge (k, j)
                        let (lo, hi) = (m.dist()[k].min(m.dist()[j]), m.dist()[k].max(m.dist()[j]));
                        prop_assert!(lo >= ell - dx - 1e-12 && hi <= 2.0 * ell + dx + 1e-12, "{} {}", lo, hi);
                    }
                }
            }
        }
    }
}
