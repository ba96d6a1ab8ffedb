// Seed-and-extend x-drop alignment of two reads with a transcript.

use lroverlap::align::{gapped_rows, validate_extension, xdrop_extend, ScoringScheme};

pub fn run_example() -> lroverlap::Result<()> {
    let s = b"TTTTGATTACAGGCATCGATCGGATCCATGCAAAA";
    let t = b"GGATTACAGCATCGATCCGATCCATGCCC";
    let seed = b"CATCGATC";
    let ps = s.windows(seed.len()).position(|w| w == seed).unwrap();
    let pt = t.windows(seed.len()).position(|w| w == seed).unwrap();

    for x in [0, 3, 7] {
        let sc = ScoringScheme::new(1, -1, -1, x)?;
        let ext = xdrop_extend(s, t, ps, pt, seed.len(), &sc, true)?;
        let tr = ext.transcript.as_ref().unwrap();
        println!(
            "X={x}: score {}, s[{}..{}] t[{}..{}] {tr}",
            ext.score, ext.begin_s, ext.end_s, ext.begin_t, ext.end_t
        );
        let (row_s, row_t) = gapped_rows(tr, &s[ext.begin_s..ext.end_s], &t[ext.begin_t..ext.end_t]).unwrap();
        println!("  {}\n  {}", String::from_utf8_lossy(&row_s), String::from_utf8_lossy(&row_t));
        assert!(validate_extension(&ext, s, t, &sc).is_ok());
    }
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
