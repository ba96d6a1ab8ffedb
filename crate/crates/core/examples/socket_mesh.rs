// The same collectives over a loopback TCP mesh. Across machines, start one
// process per rank with `SocketTransport::connect(rank, &hosts)`.

use lroverlap::exchange::{launch, Backend, DEFAULT_ROUND_CAP};

pub fn run_example() -> lroverlap::Result<()> {
    let out = launch(3, Backend::Socket, DEFAULT_ROUND_CAP, |mut ex| {
        let rank = ex.rank();
        let greetings = (0..ex.size())
            .map(|dst| format!("{rank}->{dst}").into_bytes())
            .collect();
        let got: Vec<String> = ex
            .all_to_all_v(greetings)?
            .into_iter()
            .map(|(_, b)| String::from_utf8_lossy(&b).into_owned())
            .collect();
        let max = ex.all_reduce_max(rank as u64 * 7)?;
        Ok((ex.backend(), got, max))
    })?;
    for (rank, (backend, got, max)) in out.iter().enumerate() {
        println!("rank {rank} over {backend}: received {got:?}, max {max}");
    }
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
