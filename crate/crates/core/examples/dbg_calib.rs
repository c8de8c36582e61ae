fn main() {
    use dualfluoro::calib::*;
    use dualfluoro::geometry::*;
    use nalgebra::Point3;
    let system = dualfluoro::phantom::dual_system(60.0);
    let tool_pose = RigidPose::new([0.0, 0.0, 0.0], system_center(&system).coords.into());
    // Regular tetrahedron centered on the tool origin.
    let s = 45.0;
    let beads = [
        Point3::new(s, s, s),
        Point3::new(s, -s, -s),
        Point3::new(-s, s, -s),
        Point3::new(-s, -s, s),
    ];
    let m = pose_to_matrix(&tool_pose);
    let mut f1 = [(0.0, 0.0); 4];
    let mut f2 = [(0.0, 0.0); 4];
    for (i, b) in beads.iter().enumerate() {
        let w = m.transform_point(b);
        f1[i] = project_point(&system.f1, &w).unwrap().uv;
        f2[i] = project_point(&system.f2, &w).unwrap().uv;
    }
    let base = AlignmentTool { beads_tool_frame: beads, observed_f1: f1, observed_f2: f2 };
    for bead in 0..4usize {
        for (tag, which) in [("both", 0), ("inconsistent", 1)] {
            let mut tool = base.clone();
            match which {
                0 => { tool.observed_f1[bead].0 += 5.0; tool.observed_f2[bead].0 += 5.0; }
                _ => { tool.observed_f1[bead].0 += 5.0; tool.observed_f2[bead].1 -= 5.0; }
            }
            let cal = calibrate_dual_pose(&tool, &system).unwrap();
            let sums: Vec<f64> = cal.per_bead_mm.iter().map(|(a, b)| a + b).collect();
            let worst = sums.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            println!("corrupt bead {bead} {tag:4} -> worst {worst} (ok={}) sums {:?}", worst == bead, sums.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>());
        }
    }
}
