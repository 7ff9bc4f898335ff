use floorloc::filter::{apply_constraints, estimate, init_from_heatmap, predict, resample, FilterParams, MotionNoise, OdometryStep};
use floorloc::floorplan::{rect_walls, FloorPlan};
use floorloc::matching::{normalize_to_pdf, HeatmapStack, PoseEstimate};
use floorloc::raster::Raster2D;
use floorloc::segments::Segment2;
use nalgebra::Vector2;

#[test]
fn debug_bimodal() {
    let mut walls = rect_walls(0.0, 0.0, 52.0, 4.0);
    walls.push(Segment2::new(Vector2::new(47.0, 4.0), Vector2::new(47.0, 8.0)));
    walls.push(Segment2::new(Vector2::new(47.0, 8.0), Vector2::new(52.0, 8.0)));
    walls.push(Segment2::new(Vector2::new(52.0, 8.0), Vector2::new(52.0, 4.0)));
    let plan_walls: Vec<Segment2> = walls
        .into_iter()
        .flat_map(|s| {
            let on_north = (s.a.y - 4.0).abs() < 1e-9 && (s.b.y - 4.0).abs() < 1e-9;
            let covers_door = on_north && s.a.x.min(s.b.x) <= 47.9 && s.a.x.max(s.b.x) >= 49.1;
            if covers_door {
                let (lo, hi) = (s.a.x.min(s.b.x), s.a.x.max(s.b.x));
                vec![
                    Segment2::new(Vector2::new(lo, 4.0), Vector2::new(47.9, 4.0)),
                    Segment2::new(Vector2::new(49.1, 4.0), Vector2::new(hi, 4.0)),
                ]
            } else {
                vec![s]
            }
        })
        .collect();
    let plan = FloorPlan::build(plan_walls, 0.1, Vector2::new(26.0, 2.0)).unwrap();
    println!("room traversable check (48.5, 6.0): {}", plan.is_traversable(&Vector2::new(48.5, 6.0)));

    let mut map = Raster2D::zeros(plan.walls.width, plan.walls.height, plan.walls.resolution, plan.walls.origin).unwrap();
    let mut map2 = map.clone();
    let c1 = map.world_to_cell(&Vector2::new(2.0, 2.0)).unwrap();
    map.set(c1.0, c1.1, 1.0);
    let c2 = map2.world_to_cell(&Vector2::new(50.0, 2.0)).unwrap();
    map2.set(c2.0, c2.1, 1.0);
    let stack = HeatmapStack {
        maps: vec![map, map2],
        thetas: vec![0.0, std::f64::consts::PI],
        traversable: plan.traversable.values.iter().map(|&v| v > 0.0).collect(),
    };
    let mut steps: Vec<OdometryStep> = vec![OdometryStep { forward: 0.5, heading: 0.0 }; 93];
    steps.push(OdometryStep { forward: 0.0, heading: std::f64::consts::FRAC_PI_2 });
    steps.extend(vec![OdometryStep { forward: 0.5, heading: 0.0 }; 6]);

    let params = FilterParams {
        particles: 4000,
        noise: MotionNoise { sigma_forward_frac: 0.03, sigma_heading: 0.5f64.to_radians() },
        ess_threshold: 0.5,
        step_length: 0.5,
    };
    let pdf = normalize_to_pdf(&stack);
    let mut set = init_from_heatmap(&pdf, params.particles, 99).unwrap();
    for (i, step) in steps.iter().enumerate() {
        let predicted = predict(&set, step, &params.noise, 99, i as u64);
        let (constrained, killed) = apply_constraints(&predicted, &plan, &set, step, &params.noise, 99, i as u64);
        set = constrained;
        set = resample(&set, params.ess_threshold, 99u64.wrapping_add(i as u64 * 0x9e37));
        let left_mass: f64 = set.particles.iter().filter(|p| p.x < 26.0).map(|p| p.weight).sum();
        if i % 10 == 0 || i > 90 {
            let e = estimate(&set).unwrap();
            println!(
                "step {i:3}: est ({:6.2},{:5.2},{:6.1}°) left-mass {left_mass:.3} killed {killed} ess {:.2}",
                e.x, e.y, e.theta.to_degrees(), set.ess() / set.len() as f64
            );
            let live_left: Vec<&floorloc::filter::Particle> =
                set.particles.iter().filter(|p| p.weight > 0.0 && p.x < 26.0).collect();
            if !live_left.is_empty() && i > 90 {
                let mean_x: f64 = live_left.iter().map(|p| p.x).sum::<f64>() / live_left.len() as f64;
                let mean_y: f64 = live_left.iter().map(|p| p.y).sum::<f64>() / live_left.len() as f64;
                let min_y = live_left.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
                let max_y = live_left.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
                let mean_th: f64 =
                    live_left.iter().map(|p| p.theta.to_degrees()).sum::<f64>() / live_left.len() as f64;
                println!(
                    "        left survivors: {} at mean ({mean_x:.2}, {mean_y:.2}) y∈[{min_y:.2},{max_y:.2}] θ~{mean_th:.0}°",
                    live_left.len()
                );
            }
        }
    }
}
