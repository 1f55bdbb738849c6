//! Hop-by-hop payment along A, B, C, D with costs 5, 2 and 3.
//!
//! A pays B the full price; each relay keeps its cost and pays the
//! remainder to the next hop over its own channel.

use r2p2::payment::PaymentNetwork;
use r2p2::pof::KeyPair;
use r2p2::wire::NodeAddr;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let names = ["A", "B", "C", "D"];
    let addrs: Vec<NodeAddr> = (1..=4u8).map(|i| NodeAddr([0, 0x14, 0, 0, 0, i])).collect();
    let costs = [0u64, 5, 2, 3];
    let mut net = PaymentNetwork::new();
    for a in &addrs {
        net.add_party(KeyPair::derive(*a, 6), 1_000);
    }
    for w in addrs.windows(2) {
        net.ledger.open_channel(w[0], w[1], 100, 0)?;
    }

    let price: u64 = costs[1..].iter().sum();
    let mut voucher = Some(net.issue_payment(addrs[0], addrs[1], price)?);
    println!("A pays {price} to B");
    for i in 1..addrs.len() {
        let incoming = voucher.take().expect("voucher for every hop");
        let next = addrs.get(i + 1).copied();
        voucher = net.relay_process_payment(addrs[i], addrs[i - 1], &incoming, costs[i], next)?;
        match &voucher {
            Some(v) => println!("{} keeps {}, forwards {}", names[i], costs[i], v.amount),
            None => println!("{} keeps {}", names[i], incoming.amount),
        }
    }

    net.ledger.settle_all()?;
    println!();
    for (a, n) in addrs.iter().zip(names) {
        let bal = net.ledger.account(a).unwrap().balance;
        println!("{n}: balance {bal} ({:+})", bal as i64 - 1_000);
    }
    println!(
        "tokens: minted {}, held {}",
        net.ledger.minted(),
        net.ledger.total_tokens()
    );
    Ok(())
}
