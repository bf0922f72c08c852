use emr_core::mapping::{GlobalMap, LocalMap, RobotFix, ScanConfig};
use proptest::prelude::*;

fn local_map(side: usize, cells: &[(usize, usize)]) -> LocalMap {
    let mut m = LocalMap::with_side(side, 1.0).unwrap();
    for &(x, y) in cells {
        m.set(x % side, y % side);
    }
    m
}

fn cells_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..32, 0usize..32), 0..80)
}

proptest! {
    #[test]
    fn echoes_land_inside_the_map(
        alpha in -180.0f64..=180.0,
        frac in 0.0f64..=1.0,
        l_mmax in 10.0f64..200.0,
    ) {
        let cfg = ScanConfig { l_mmax: l_mmax.round(), ..ScanConfig::default() };
        let mut map = LocalMap::for_config(&cfg).unwrap();
        let d = frac * cfg.l_mmax;
        if let Some((x, y)) = map.plot_point(alpha, d).unwrap() {
            prop_assert!(x < map.side() && y < map.side());
            prop_assert!(map.get(x, y));
            // Within one cell of the exact polar position.
            let a = alpha.to_radians();
            let ex = map.origin() as f64 + a.sin() * d;
            let ey = map.origin() as f64 + a.cos() * d;
            prop_assert!((x as f64 - ex).abs() <= 1.0 && (y as f64 - ey).abs() <= 1.0);
        } else {
            prop_assert!(d <= 0.0);
        }
    }

    #[test]
    fn merge_is_idempotent(cells in cells_strategy(), alpha in -720.0f64..720.0, dx in -300i64..300, dy in -300i64..300) {
        let local = local_map(32, &cells);
        let fix = RobotFix::new(alpha, dx, dy);
        let mut once = GlobalMap::new(1.0);
        once.merge(&local, &fix).unwrap();
        let mut twice = once.clone();
        twice.merge(&local, &fix).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn merge_only_adds(a in cells_strategy(), b in cells_strategy(), alpha in -180.0f64..180.0, dx in -50i64..50) {
        let mut g = GlobalMap::new(1.0);
        g.merge(&local_map(32, &a), &RobotFix::new(0.0, 0, 0)).unwrap();
        let before: Vec<(i64, i64)> = g.cells().copied().collect();
        g.merge(&local_map(32, &b), &RobotFix::new(alpha, dx, -dx)).unwrap();
        prop_assert!(before.iter().all(|(x, y)| g.contains(*x, *y)));
        prop_assert!(g.count() >= before.len());
    }

    #[test]
    fn full_turns_change_nothing(cells in cells_strategy(), turns in -3i32..3, dx in -9i64..9) {
        let local = local_map(32, &cells);
        let mut a = GlobalMap::new(1.0);
        a.merge(&local, &RobotFix::new(0.0, dx, 0)).unwrap();
        let mut b = GlobalMap::new(1.0);
        b.merge(&local, &RobotFix::new(360.0 * f64::from(turns), dx, 0)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn map_files_round_trip(cells in cells_strategy(), half in 1usize..20) {
        let side = 2 * half;
        let local = local_map(side, &cells);
        prop_assert_eq!(LocalMap::from_bytes(&local.to_bytes()).unwrap(), local.clone());
        let mut g = GlobalMap::new(1.0);
        g.merge(&local, &RobotFix::new(33.0, -4, 7)).unwrap();
        prop_assert_eq!(GlobalMap::from_bytes(&g.to_bytes()).unwrap(), g);
    }
}

#[test]
fn rasters_must_match() {
    let local = LocalMap::with_side(8, 1.0).unwrap();
    assert!(GlobalMap::new(2.5).merge(&local, &RobotFix::new(0.0, 0, 0)).is_err());
}

#[test]
fn quarter_turn_maps_north_to_east() {
    let mut local = LocalMap::with_side(12, 1.0).unwrap();
    assert!(local.set_relative(0, 4));
    let mut g = GlobalMap::new(1.0);
    g.merge(&local, &RobotFix::new(90.0, 10, 20)).unwrap();
    assert_eq!(g.cells().copied().collect::<Vec<_>>(), vec![(14, 20)]);
}
