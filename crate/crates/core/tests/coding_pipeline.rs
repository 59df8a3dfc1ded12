//! End-to-end coding checks: batches streamed through lossy relay chains
//! must reconstruct the source block byte for byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadsim_core::bats::{
    self, BatsParams, Batch, BlockDecoder, CodedPacket, SourceBlock,
};
use roadsim_core::netsim::{ChainSim, ChainSpec, NodeId, SimTime, TransferCoding, TransferParams};

fn random_block(rng: &mut ChaCha8Rng, k: usize, len: usize) -> SourceBlock {
    let data: Vec<u8> = (0..k * len).map(|_| rng.gen()).collect();
    SourceBlock::from_bytes(&data, len).unwrap()
}

/// Abstract relay pipeline without timing: drop each packet independently,
/// recode whatever survived at each hop.
fn lossy_pipeline(
    batch: &Batch,
    packets: Vec<CodedPacket>,
    hops: usize,
    loss: f64,
    params: &BatsParams,
    rng: &mut ChaCha8Rng,
) -> Vec<CodedPacket> {
    let mut current = packets;
    let _ = batch;
    for _ in 0..hops {
        let survivors: Vec<CodedPacket> = current
            .into_iter()
            .filter(|_| rng.gen::<f64>() >= loss)
            .collect();
        if survivors.is_empty() {
            return Vec::new();
        }
        current = bats::recode(&survivors, params.recode_output_count, rng).unwrap();
    }
    current
}

#[test]
fn three_hop_chain_recovers_block_byte_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3407);
    let k = 64;
    let len = 128;
    let block = random_block(&mut rng, k, len);
    let params = BatsParams::for_block(k);

    let mut decoder = BlockDecoder::new(k, len);
    let mut batches_consumed = 0;
    let mut batch_id = 0u64;
    while !decoder.is_complete() {
        let (batch, packets) = bats::encode_batch(&block, &params, batch_id, &mut rng).unwrap();
        batch_id += 1;
        batches_consumed += 1;
        assert!(
            batches_consumed <= 20 * k,
            "decode did not converge within the batch budget"
        );
        for pkt in lossy_pipeline(&batch, packets, 3, 0.2, &params, &mut rng) {
            decoder.absorb(&batch, &pkt);
        }
    }
    let recovered = decoder.recover().unwrap();
    assert_eq!(recovered, block.packets(), "recovery must be byte-identical");
    // sanity on the overhead: a 64-packet block should take a few dozen
    // batches through 20% loss, not hundreds
    assert!(batches_consumed >= k / params.batch_size);
    assert!(batches_consumed < 10 * k, "consumed {batches_consumed} batches");
}

#[test]
fn repeated_trials_deliver_bit_identical_blocks() {
    // shorter version of the acceptance sweep: every successful decode is
    // exact, across block shapes and loss rates
    let mut rng = ChaCha8Rng::seed_from_u64(0x3408);
    for trial in 0..100u64 {
        let k = 1 + (trial as usize % 24);
        let len = 16 + (trial as usize % 48);
        let block = random_block(&mut rng, k, len);
        let params = BatsParams::for_block(k);
        let loss = 0.05 + (trial as f64 % 7.0) * 0.05;

        let mut decoder = BlockDecoder::new(k, len);
        let mut batch_id = 0u64;
        while !decoder.is_complete() && batch_id < 40 * k as u64 + 40 {
            let (batch, packets) =
                bats::encode_batch(&block, &params, batch_id, &mut rng).unwrap();
            batch_id += 1;
            for pkt in lossy_pipeline(&batch, packets, 2, loss, &params, &mut rng) {
                decoder.absorb(&batch, &pkt);
            }
        }
        assert!(decoder.is_complete(), "trial {trial} never reached rank {k}");
        assert_eq!(decoder.recover().unwrap(), block.packets(), "trial {trial}");
    }
}

#[test]
fn chain_transfer_is_deterministic_per_seed() {
    let k = 32;
    let len = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let block = random_block(&mut rng, k, len);
    let params = TransferParams::for_block(k, len);
    let run = |seed: u64| {
        let spec = ChainSpec::uniform(5, 60.0, 0.1, 0.4).with_header_bytes(32);
        let mut sim = ChainSim::new(spec, seed).unwrap();
        sim.run_transfer(NodeId(0), NodeId(4), &block, TransferCoding::Bats, &params, SimTime::ZERO)
            .unwrap()
    };
    let a = run(7);
    let b = run(7);
    assert_eq!(a, b);
    let c = run(8);
    assert!(c.elapsed != a.elapsed || c.packets_sent != a.packets_sent);
}
