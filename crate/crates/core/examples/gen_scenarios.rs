//! Regenerates the shipped scenario fixtures under `scenarios/`.
//!
//! Run from the workspace root:
//!   cargo run -p semistatic-core --example gen_scenarios
//!
//! Embeddings are random unit vectors drawn from each scenario's seed, so
//! reruns are byte-identical.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use semistatic_core::geometry::{Aabb, Pose2D};
use semistatic_core::stationarity::StationarityLabel;
use semistatic_core::world::{
    ChangeEvent, ChangeKind, GroundTruthObject, RelevancyEntry, RelevancyTable, Scenario,
    SensorSpec, WallSegment,
};

const EMBEDDING_DIM: usize = 32;

fn embeddings(seed: u64, classes: &[&str]) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    for class in classes {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ fold(class));
        let raw: Vec<f64> = (0..EMBEDDING_DIM)
            .map(|_| {
                let u1: f64 = rng.random::<f64>().max(1e-12);
                let u2: f64 = rng.random::<f64>();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let norm: f64 = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.insert(class.to_string(), raw.iter().map(|x| x / norm).collect());
    }
    out
}

fn fold(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn ngon(r: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

fn rect(w: f64, h: f64) -> Vec<[f64; 2]> {
    vec![
        [-w / 2.0, -h / 2.0],
        [w / 2.0, -h / 2.0],
        [w / 2.0, h / 2.0],
        [-w / 2.0, h / 2.0],
    ]
}

fn border_walls(b: &Aabb) -> Vec<WallSegment> {
    vec![
        WallSegment {
            from: [b.min_x, b.min_y],
            to: [b.max_x, b.min_y],
        },
        WallSegment {
            from: [b.max_x, b.min_y],
            to: [b.max_x, b.max_y],
        },
        WallSegment {
            from: [b.max_x, b.max_y],
            to: [b.min_x, b.max_y],
        },
        WallSegment {
            from: [b.min_x, b.max_y],
            to: [b.min_x, b.min_y],
        },
    ]
}

fn object(
    id: &str,
    class: &str,
    footprint: Vec<[f64; 2]>,
    label: StationarityLabel,
    present_from: f64,
    x: f64,
    y: f64,
) -> GroundTruthObject {
    GroundTruthObject {
        id: id.into(),
        class_name: class.into(),
        footprint,
        stationarity_label: label,
        present_from,
        pose: Pose2D::new(x, y, 0.0),
    }
}

fn two_balls() -> Scenario {
    use StationarityLabel::Dynamic;
    let bounds = Aabb {
        min_x: 0.0,
        min_y: 0.0,
        max_x: 6.0,
        max_y: 4.0,
    };
    Scenario {
        schema_version: 1,
        name: "two_balls".into(),
        walls: border_walls(&bounds),
        bounds,
        objects: vec![
            object("ball_tennis", "ball", ngon(0.05, 12), Dynamic, 0.0, 3.0, 2.4),
            // Enters the scene after the tennis ball has been removed.
            object("ball_soccer", "ball", ngon(0.22, 16), Dynamic, 39.5, 3.2, 1.6),
        ],
        changes: vec![
            ChangeEvent {
                time: 35.0,
                kind: ChangeKind::Remove,
                object_id: "ball_tennis".into(),
                new_pose: None,
            },
            // The soccer ball rolls a short distance and stops.
            ChangeEvent {
                time: 55.0,
                kind: ChangeKind::Move,
                object_id: "ball_soccer".into(),
                new_pose: Some(Pose2D::new(3.6, 1.5, 0.0)),
            },
            // The tennis ball is reintroduced at its old spot.
            ChangeEvent {
                time: 80.0,
                kind: ChangeKind::Add,
                object_id: "ball_tennis".into(),
                new_pose: Some(Pose2D::new(3.0, 2.4, 0.0)),
            },
        ],
        robot_start: Pose2D::new(1.0, 2.0, 0.0),
        sensor: SensorSpec {
            fov_half_angle: 0.9,
            max_range: 4.0,
            points_per_object: 48,
            range_noise_sigma: 0.0,
            feature_noise_sigma: 0.0,
            class_confusion_prob: 0.0,
            detection_visibility_threshold: 0.3,
        },
        class_embeddings: embeddings(101, &["ball"]),
        relevancy_table: RelevancyTable {
            default: 0.1,
            entries: vec![],
        },
        rng_seed: 101,
    }
}

fn two_room() -> Scenario {
    use StationarityLabel::{Dynamic, Static};
    let bounds = Aabb {
        min_x: 0.0,
        min_y: 0.0,
        max_x: 24.0,
        max_y: 14.0,
    };
    let mut walls = border_walls(&bounds);
    // Two rooms joined by a hallway; door gaps at y in [6.2, 7.8].
    for x in [11.0, 13.0] {
        walls.push(WallSegment {
            from: [x, 0.0],
            to: [x, 6.2],
        });
        walls.push(WallSegment {
            from: [x, 7.8],
            to: [x, 14.0],
        });
    }
    let objects = vec![
        // Room A (west).
        object("table_a", "table", rect(0.9, 0.6), Static, 0.0, 3.0, 11.2),
        object("chair_a1", "chair", ngon(0.25, 8), Dynamic, 0.0, 3.9, 10.5),
        object("chair_a2", "chair", ngon(0.25, 8), Dynamic, 0.0, 2.2, 10.3),
        object("plant_a", "plant", ngon(0.2, 8), Static, 0.0, 8.0, 12.8),
        object("box_a", "box", rect(0.4, 0.4), Dynamic, 0.0, 7.5, 1.8),
        object("sofa_a", "sofa", rect(1.6, 0.7), Static, 0.0, 2.0, 2.0),
        object("shelf_a", "shelf", rect(1.2, 0.4), Static, 0.0, 9.4, 7.4),
        // Hallway.
        object("bin_h", "bin", ngon(0.15, 8), Dynamic, 0.0, 12.0, 1.5),
        // Room B (east).
        object("desk_b", "desk", rect(1.4, 0.7), Static, 0.0, 19.5, 12.2),
        object("chair_b1", "chair", ngon(0.25, 8), Dynamic, 0.0, 19.0, 11.3),
        object("chair_b2", "chair", ngon(0.25, 8), Dynamic, 0.0, 20.4, 11.3),
        object("cabinet_b", "cabinet", rect(0.5, 1.2), Static, 0.0, 22.6, 7.0),
        object("monitor_b", "monitor", rect(0.35, 0.35), Dynamic, 0.0, 15.5, 12.9),
        object("ball_b", "ball", ngon(0.12, 10), Dynamic, 0.0, 15.5, 1.5),
        object("crate_b", "crate", rect(0.45, 0.45), Dynamic, 0.0, 21.0, 2.2),
        object("plant_b", "plant", ngon(0.2, 8), Static, 0.0, 14.6, 12.8),
        // Enters only through its scripted add event.
        object("mug_b", "mug", ngon(0.08, 8), Dynamic, 1.0e9, 19.0, 10.6),
    ];
    let changes = vec![
        ChangeEvent {
            time: 120.0,
            kind: ChangeKind::Move,
            object_id: "chair_a1".into(),
            new_pose: Some(Pose2D::new(6.2, 9.4, 0.3)),
        },
        ChangeEvent {
            time: 150.0,
            kind: ChangeKind::Remove,
            object_id: "box_a".into(),
            new_pose: None,
        },
        ChangeEvent {
            time: 180.0,
            kind: ChangeKind::Move,
            object_id: "chair_b1".into(),
            new_pose: Some(Pose2D::new(16.2, 10.2, 0.0)),
        },
        ChangeEvent {
            time: 210.0,
            kind: ChangeKind::Remove,
            object_id: "ball_b".into(),
            new_pose: None,
        },
        ChangeEvent {
            time: 240.0,
            kind: ChangeKind::Add,
            object_id: "mug_b".into(),
            new_pose: Some(Pose2D::new(19.0, 10.6, 0.0)),
        },
        ChangeEvent {
            time: 270.0,
            kind: ChangeKind::Move,
            object_id: "crate_b".into(),
            new_pose: Some(Pose2D::new(22.0, 5.7, 0.5)),
        },
        ChangeEvent {
            time: 300.0,
            kind: ChangeKind::Add,
            object_id: "box_a".into(),
            new_pose: Some(Pose2D::new(5.4, 10.2, 0.0)),
        },
        ChangeEvent {
            time: 330.0,
            kind: ChangeKind::Move,
            object_id: "plant_b".into(),
            new_pose: Some(Pose2D::new(16.0, 12.7, 0.0)),
        },
        ChangeEvent {
            time: 360.0,
            kind: ChangeKind::Move,
            object_id: "chair_a2".into(),
            new_pose: Some(Pose2D::new(3.4, 9.3, 0.0)),
        },
        ChangeEvent {
            time: 420.0,
            kind: ChangeKind::Remove,
            object_id: "chair_b2".into(),
            new_pose: None,
        },
    ];
    let classes = [
        "table", "chair", "plant", "box", "sofa", "shelf", "bin", "desk", "cabinet", "monitor",
        "ball", "crate", "mug",
    ];
    Scenario {
        schema_version: 1,
        name: "two_room".into(),
        walls,
        bounds,
        objects,
        changes,
        robot_start: Pose2D::new(2.0, 7.0, 0.0),
        sensor: SensorSpec {
            fov_half_angle: 0.65,
            max_range: 3.0,
            points_per_object: 40,
            range_noise_sigma: 0.005,
            feature_noise_sigma: 0.02,
            class_confusion_prob: 0.0,
            detection_visibility_threshold: 0.3,
        },
        class_embeddings: embeddings(202, &classes),
        relevancy_table: RelevancyTable {
            default: 0.1,
            entries: vec![],
        },
        rng_seed: 202,
    }
}

fn search_office() -> Scenario {
    use StationarityLabel::{Dynamic, Static};
    let bounds = Aabb {
        min_x: 0.0,
        min_y: 0.0,
        max_x: 11.0,
        max_y: 7.0,
    };
    let objects = vec![
        // Stations along the north wall; the patrol lattice reaches them last.
        object("desk", "desk", rect(1.4, 0.7), Static, 0.0, 2.0, 6.4),
        object("chair_c", "chair", ngon(0.25, 8), Dynamic, 0.0, 4.2, 6.0),
        object("shelf", "shelf", rect(1.2, 0.4), Static, 0.0, 6.0, 6.4),
        object("chair_d", "chair", ngon(0.25, 8), Dynamic, 0.0, 7.6, 6.0),
        object("coffee_table", "coffee_table", rect(0.8, 0.5), Static, 0.0, 9.0, 6.2),
        object("cabinet", "cabinet", rect(0.5, 1.0), Static, 0.0, 10.6, 4.9),
        // Clutter away from the stations.
        object("sofa", "sofa", rect(1.5, 0.7), Static, 0.0, 9.8, 1.1),
        object("plant", "plant", ngon(0.18, 8), Static, 0.0, 0.6, 6.6),
        object("bin", "bin", ngon(0.15, 8), Dynamic, 0.0, 6.4, 1.2),
        object("stool", "stool", ngon(0.2, 8), Dynamic, 0.0, 3.2, 1.8),
        // Search targets, placed after the initial map was built.
        object("book_a", "book", ngon(0.09, 8), Dynamic, 0.5, 5.8, 5.8),
        object("book_b", "book", ngon(0.09, 8), Dynamic, 0.5, 6.3, 5.8),
        object("book_c", "book", ngon(0.09, 8), Dynamic, 0.5, 4.2, 5.45),
        object("book_d", "book", ngon(0.09, 8), Dynamic, 0.5, 7.6, 5.45),
        object("bowl_a", "bowl", ngon(0.08, 8), Dynamic, 0.5, 8.8, 5.7),
        object("bowl_b", "bowl", ngon(0.08, 8), Dynamic, 0.5, 9.3, 5.7),
        object("keyboard_a", "keyboard", rect(0.3, 0.12), Dynamic, 0.5, 1.8, 5.85),
        object("keyboard_b", "keyboard", rect(0.3, 0.12), Dynamic, 0.5, 2.5, 5.85),
    ];
    let mut entries = Vec::new();
    let mut add = |query: &str, rows: &[(&str, f64)]| {
        for (class, score) in rows {
            entries.push(RelevancyEntry {
                query: query.into(),
                class: (*class).into(),
                score: *score,
            });
        }
    };
    add(
        "Find my red book!",
        &[("shelf", 0.9), ("chair", 0.35), ("desk", 0.2), ("book", 0.95)],
    );
    add(
        "Where is my novel?",
        &[("shelf", 0.9), ("chair", 0.35), ("desk", 0.2), ("book", 0.95)],
    );
    add(
        "Find the book I left on a chair!",
        &[("chair", 0.9), ("shelf", 0.4), ("book", 0.95)],
    );
    add(
        "Where did my textbook go?",
        &[("chair", 0.9), ("shelf", 0.4), ("book", 0.95)],
    );
    add(
        "Find my cereal bowl!",
        &[("coffee_table", 0.9), ("cabinet", 0.5), ("bowl", 0.95)],
    );
    add(
        "Where is the blue bowl?",
        &[("coffee_table", 0.9), ("cabinet", 0.5), ("bowl", 0.95)],
    );
    add(
        "Find my keyboard!",
        &[("desk", 0.9), ("shelf", 0.2), ("keyboard", 0.95)],
    );
    add(
        "Where is my mechanical keyboard?",
        &[("desk", 0.9), ("shelf", 0.2), ("keyboard", 0.95)],
    );
    let classes = [
        "desk",
        "chair",
        "shelf",
        "coffee_table",
        "cabinet",
        "sofa",
        "plant",
        "bin",
        "stool",
        "book",
        "bowl",
        "keyboard",
    ];
    Scenario {
        schema_version: 1,
        name: "search_office".into(),
        walls: border_walls(&bounds),
        bounds,
        objects,
        changes: vec![],
        robot_start: Pose2D::new(0.8, 0.8, 0.0),
        sensor: SensorSpec {
            fov_half_angle: 1.0,
            max_range: 3.0,
            points_per_object: 36,
            range_noise_sigma: 0.01,
            feature_noise_sigma: 0.02,
            class_confusion_prob: 0.0,
            detection_visibility_threshold: 0.3,
        },
        class_embeddings: embeddings(303, &classes),
        relevancy_table: RelevancyTable {
            default: 0.05,
            entries,
        },
        rng_seed: 303,
    }
}

fn main() {
    let out_dir = std::path::Path::new("scenarios");
    std::fs::create_dir_all(out_dir).expect("create scenarios dir");
    for scenario in [two_balls(), two_room(), search_office()] {
        scenario.validate().expect("generated scenario is valid");
        let path = out_dir.join(format!("{}.scenario", scenario.name));
        let json = serde_json::to_string_pretty(&scenario).unwrap();
        std::fs::write(&path, json + "\n").expect("write scenario");
        println!("wrote {}", path.display());
    }
}
