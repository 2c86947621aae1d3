use std::path::Path;
use zsnav::occupancy::{DistanceField, Node};
use zsnav::simulator::Scenario;

fn node(s: &Scenario, p: &zsnav::geometry::Vec3) -> Node {
    let layer = s.world.layer_index(p.z).expect("point lies on a layer");
    Node {
        layer,
        cell: s.world.layers[layer].cell_at(p).unwrap(),
    }
}

#[test]
fn bundled_optimal_lengths_are_consistent_with_the_grid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in ["warehouse.json", "two_level.json"] {
        let s = Scenario::load(&dir.join(name)).unwrap();
        let goal = node(&s, &s.goal);
        let field = DistanceField::compute(&s.world, &[goal], s.vertical());
        let grid = field.distance(node(&s, &s.start.pos()));
        let opt = s.file.optimal_path_length;
        let straight = (s.start.pos() - s.goal).norm();
        // any-angle length sits between the straight line and the 8-connected geodesic
        assert!(grid.is_finite(), "{name}: goal unreachable");
        assert!(
            straight <= opt + 0.3,
            "{name}: optimal {opt} shorter than straight line {straight}"
        );
        assert!(
            opt <= grid + 1e-6,
            "{name}: optimal {opt} longer than grid geodesic {grid}"
        );
        assert!(
            grid <= opt * 1.0824 + 0.3,
            "{name}: grid {grid} too far above optimal {opt}"
        );
    }
}
