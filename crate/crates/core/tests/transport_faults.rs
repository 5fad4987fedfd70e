//! Agent and collector through a proxy that breaks connections.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use relay_core::sim::{preset, simulate};
use relay_core::transport::{agent_run, capture, collector_serve, encode_trace, AgentConfig, DEFAULT_RING_BYTES};

/// Forwards connections to `upstream`. The first `cuts` connections are
/// severed after `cut_after` bytes from the agent.
fn proxy(upstream: SocketAddr, cuts: usize, cut_after: u64) -> (SocketAddr, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let accepted = Arc::new(AtomicUsize::new(0));
    let count = accepted.clone();
    thread::spawn(move || {
        for client in listener.incoming() {
            let Ok(client) = client else { return };
            let n = count.fetch_add(1, Ordering::SeqCst);
            let Ok(server) = TcpStream::connect(upstream) else { return };
            let limit = if n < cuts { cut_after } else { u64::MAX };
            let (c2, s2) = (client.try_clone().unwrap(), server.try_clone().unwrap());
            thread::spawn(move || pump(s2, c2, u64::MAX));
            thread::spawn(move || pump(client, server, limit));
        }
    });
    (addr, accepted)
}

fn pump(mut from: TcpStream, mut to: TcpStream, limit: u64) {
    let mut buf = [0u8; 8192];
    let mut left = limit;
    loop {
        let want = buf.len().min(usize::try_from(left).unwrap_or(usize::MAX));
        match from.read(&mut buf[..want]) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if to.write_all(&buf[..n]).is_err() {
                    break;
                }
                left -= n as u64;
                if left == 0 {
                    break;
                }
            }
        }
    }
    let _ = from.shutdown(Shutdown::Both);
    let _ = to.shutdown(Shutdown::Both);
}

fn session(cuts: usize, cut_after: u64) -> io::Result<()> {
    let mut cfg = preset("randread_miss").unwrap();
    cfg.requests_per_thread = 800;
    let sim = simulate(&cfg).unwrap();
    let direct = encode_trace(&sim.records, &sim.strings).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let upstream = listener.local_addr()?;
    let collector = thread::spawn(move || collector_serve(&listener, Vec::new()));
    let (addr, accepted) = proxy(upstream, cuts, cut_after);

    let (mut tracer, source) = capture(1, DEFAULT_RING_BYTES);
    let records = sim.records.clone();
    let producer = thread::spawn(move || {
        for r in &records {
            tracer.emit(r);
        }
        tracer.close()
    });
    let agent_cfg = AgentConfig { period: Duration::from_millis(2), batch_records: 1000, retry_delay: Duration::from_millis(10), ..Default::default() };
    let agent = agent_run(addr, source, &sim.strings, &agent_cfg).expect("agent finishes");
    let produced = producer.join().unwrap();
    let (stats, bytes) = collector.join().unwrap().expect("collector finishes");

    assert_eq!(produced.dropped, 0);
    assert_eq!(agent.records, sim.records.len() as u64);
    assert_eq!(agent.connections, cuts as u64 + 1);
    assert_eq!(accepted.load(Ordering::SeqCst), cuts + 1);
    assert_eq!(stats.broken, cuts as u64);
    assert!(bytes == direct, "collected trace differs from direct emission");
    Ok(())
}

#[test]
fn connection_cut_mid_batch_resumes_without_loss() {
    session(1, 30_000).unwrap();
}

#[test]
fn repeated_cuts_resume_without_duplication() {
    session(3, 70_001).unwrap();
}

#[test]
fn cut_inside_first_batch_header() {
    // the agent's first bytes are a batch header; cutting at 3 bytes leaves
    // the collector with a partial magic
    session(2, 3).unwrap();
}

#[test]
fn agent_gives_up_when_collector_is_unreachable() {
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let (tracer, source) = capture(1, DEFAULT_RING_BYTES);
    tracer.close();
    let cfg = AgentConfig { retry_delay: Duration::from_millis(1), max_attempts: 3, ..Default::default() };
    let err = agent_run(addr, source, &relay_core::StringTable::new(), &cfg).unwrap_err();
    assert!(err.to_string().contains("after 3 attempts"), "{err}");
}
