use bnpmfa::ingest::{
    build_graph, read_coords, read_expression, read_labels, write_coords, write_expression, write_labels, NeighborRule,
};
use bnpmfa::simulate::{generate_dataset, Lattice, SimConfig};

#[test]
fn large_simulated_matrix_round_trips_exactly() {
    let ds = generate_dataset(&SimConfig {
        lattice: Lattice::Square(40),
        p: 2000,
        q: 5,
        potts_sweeps: 5,
        seed: 17,
        ..SimConfig::default()
    })
    .unwrap();
    assert_eq!(ds.x.values().shape(), (2000, 1600));
    let dir = tempfile::tempdir().unwrap();
    let xp = dir.path().join("x.csv");
    let cp = dir.path().join("coords.csv");
    let lp = dir.path().join("labels.csv");
    write_expression(&xp, &ds.x).unwrap();
    write_coords(&cp, ds.x.spot_ids(), &ds.coords).unwrap();
    write_labels(&lp, ds.x.spot_ids(), &ds.truth).unwrap();

    let x = read_expression(&xp).unwrap();
    assert_eq!(x, ds.x);
    let coords = read_coords(&cp, x.spot_ids()).unwrap();
    assert_eq!(coords, ds.coords);
    let labels = read_labels(&lp, x.spot_ids()).unwrap();
    let truth: Vec<String> = ds.truth.iter().map(|l| l.to_string()).collect();
    assert_eq!(labels, truth);
    assert_eq!(build_graph(&coords, NeighborRule::Square4).unwrap(), ds.graph);
    // No temp files left behind.
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
}

#[test]
fn coordinates_are_joined_by_id_not_position() {
    let dir = tempfile::tempdir().unwrap();
    let cp = dir.path().join("c.csv");
    std::fs::write(&cp, "spot_id,x,y\nb,1,0\na,0,0\nc,2,0\n").unwrap();
    let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let c = read_coords(&cp, &ids).unwrap();
    assert_eq!(c.points(), &[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
    let g = build_graph(&c, NeighborRule::Square4).unwrap();
    assert_eq!(g.edges(), &[(0, 1), (1, 2)]);

    std::fs::write(&cp, "spot_id,x,y\na,0,0\nb,1,0\n").unwrap();
    assert!(read_coords(&cp, &ids).is_err());
}
