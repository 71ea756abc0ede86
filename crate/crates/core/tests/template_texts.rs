use segspmm::cin::{
    normalize_text, parse_cin, Access, CinStmt, IndexVar, OutputRace, ParallelAnnotation, ParallelUnit,
    ParallelUnit::*, Params, SizeExpr,
};
use segspmm::schedule::{apply_all, validate_schedule, validate_with_params, ScheduleCmd};

const FIXTURES: [&str; 4] = ["nnz_serial", "row_serial", "row_group", "nnz_segment"];

fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{name}.cin", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

fn size(text: &str) -> SizeExpr {
    match parse_cin(&format!("suchthat(forall(i,C(i)=A(i)),split(i,a,b,{text}))")).unwrap().relations()[0].clone() {
        segspmm::cin::Relation::Split { factor, .. } => factor,
        _ => unreachable!(),
    }
}

#[test]
fn fixtures_round_trip_through_printer() {
    for name in FIXTURES {
        let text = fixture(name);
        let stmt = parse_cin(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let printed = stmt.to_string();
        assert_eq!(normalize_text(&printed), normalize_text(&text), "{name}");
        assert_eq!(parse_cin(&printed).unwrap(), stmt, "{name}");
    }
}

#[test]
fn fixtures_validate_symbolically_and_concretely() {
    let params = Params { p: 256, g: 32, c: 1, n: 4, r: 32 };
    for name in FIXTURES {
        let stmt = parse_cin(&fixture(name)).unwrap();
        assert_eq!(validate_schedule(&stmt), Vec::<String>::new(), "{name}");
        assert_eq!(validate_with_params(&stmt, &params), Vec::<String>::new(), "{name}");
    }
}

#[test]
fn indivisible_parameters_are_rejected() {
    let stmt = parse_cin(&fixture("row_serial")).unwrap();
    let params = Params { p: 256, g: 32, c: 3, n: 4, r: 1 };
    assert!(!validate_with_params(&stmt, &params).is_empty());
}

#[test]
fn group_annotation_of_row_group_text() {
    let stmt = parse_cin(&fixture("row_group")).unwrap();
    let (var, ann) = stmt.group_annotation().unwrap();
    assert_eq!(var.name(), "jpos1");
    assert_eq!(ann.unit, GPUGroup);
    assert_eq!(ann.race, OutputRace::Atomics);
    assert_eq!(ann.group.as_ref().unwrap().size.to_string(), "r");
}

#[test]
fn schedule_commands_reproduce_nnz_serial_text() {
    fn v(s: &str) -> IndexVar {
        IndexVar::new(s)
    }
    let hw = |var: &str, unit: ParallelUnit, race: OutputRace| ScheduleCmd::Parallelize {
        var: v(var),
        annotation: ParallelAnnotation::hardware(unit, race),
    };
    let expr = CinStmt::spmm().assignments()[0].2.clone();
    let cmds = vec![
        ScheduleCmd::Fuse { outer: v("i"), inner: v("j"), fused: v("f") },
        ScheduleCmd::Pos { var: v("f"), pos_var: v("fpos"), access: Access::new("A", &["i", "j"]) },
        ScheduleCmd::Split { var: v("fpos"), outer: v("block"), inner: v("fpos1"), factor: size("p*g/(N/c)") },
        ScheduleCmd::Split { var: v("fpos1"), outer: v("warp"), inner: v("nnz"), factor: size("g") },
        ScheduleCmd::Split { var: v("k"), outer: v("ko"), inner: v("thread"), factor: size("c") },
        ScheduleCmd::Bound { var: v("ko"), bounded: v("dense_val"), extent: size("N/c") },
        ScheduleCmd::Precompute { expr, loops: vec![v("nnz")], workspace: "tnnzC".into() },
        hw("block", GPUBlock, OutputRace::NoRaces),
        hw("warp", GPUWarp, OutputRace::NoRaces),
        hw("thread", GPUThread, OutputRace::Atomics),
    ];
    let stmt = apply_all(&CinStmt::spmm(), &cmds).unwrap();
    assert_eq!(normalize_text(&stmt.to_string()), normalize_text(&fixture("nnz_serial")));
}
