use std::collections::{HashMap, HashSet};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;

use qkdsim_core::kms::{KeyDelivery, KeyManager, KmsConfig, KmsError, SaeId, SimClock};
use qkdsim_core::session::{AlarmThresholds, QkdLink, KEY_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

const KEYS: u64 = 1000;

/// Several masters race `enc_keys` with random batch sizes while slaves
/// redeem the delivered IDs as they arrive.
#[test]
fn concurrent_enc_dec_conserves_every_key() {
    let kms = Arc::new(KeyManager::new(KmsConfig::default(), Arc::new(SimClock::new(0.0))));
    let a = SaeId::new("alice").unwrap();
    let b = SaeId::new("bob").unwrap();
    kms.register_pair(&a, &b).unwrap();
    let mut link = QkdLink::new(77, AlarmThresholds::default());
    link.tick((KEYS * KEY_BITS) as f64, 0.04, 1.0).unwrap();
    let carved = link.carve_keys();
    let reference: HashMap<Uuid, [u8; 32]> = carved.alice.iter().map(|k| (k.key_id, k.material)).collect();
    assert_eq!(kms.deposit(&a, &b, carved.alice, carved.bob).unwrap(), KEYS as usize);

    let (tx, rx) = mpsc::channel::<Vec<(Uuid, [u8; 32])>>();
    let rx = Arc::new(std::sync::Mutex::new(rx));

    let masters: Vec<_> = (0..8u64)
        .map(|t| {
            let (kms, a, b, tx) = (kms.clone(), a.clone(), b.clone(), tx.clone());
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(t);
                let mut got = Vec::new();
                loop {
                    let want = rng.random_range(1..=7);
                    match kms.enc_keys(&a, &b, want) {
                        Ok(keys) => {
                            assert_eq!(keys.len(), want);
                            let batch: Vec<_> = keys.iter().map(|k| (k.key_id, k.material)).collect();
                            got.extend(batch.iter().copied());
                            tx.send(batch).unwrap();
                        }
                        Err(KmsError::ResourceExhausted { stored: 0, .. }) => break,
                        Err(KmsError::ResourceExhausted { .. }) => continue,
                        Err(e) => panic!("{e}"),
                    }
                    thread::yield_now();
                }
                got
            })
        })
        .collect();
    drop(tx);

    let slaves: Vec<_> = (0..4)
        .map(|_| {
            let (kms, a, b, rx) = (kms.clone(), a.clone(), b.clone(), rx.clone());
            thread::spawn(move || {
                let mut got = Vec::new();
                loop {
                    let batch = match rx.lock().unwrap().recv() {
                        Ok(batch) => batch,
                        Err(_) => break,
                    };
                    let ids: Vec<Uuid> = batch.iter().map(|(id, _)| *id).collect();
                    let keys = kms.dec_keys(&b, &a, &ids).unwrap();
                    for (k, (id, material)) in keys.iter().zip(&batch) {
                        assert_eq!(k.key_id, *id);
                        assert_eq!(&k.material, material);
                    }
                    // Second redemption of the same batch fails and changes nothing.
                    assert!(matches!(kms.dec_keys(&b, &a, &ids), Err(KmsError::UnknownKeys(_))));
                    got.extend(ids);
                }
                got
            })
        })
        .collect();

    let enc: Vec<(Uuid, [u8; 32])> = masters.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let dec: Vec<Uuid> = slaves.into_iter().flat_map(|h| h.join().unwrap()).collect();

    let enc_ids: HashSet<Uuid> = enc.iter().map(|(id, _)| *id).collect();
    assert_eq!(enc.len(), KEYS as usize, "no key lost");
    assert_eq!(enc_ids.len(), KEYS as usize, "no key delivered twice");
    assert_eq!(enc_ids, reference.keys().copied().collect(), "exactly the deposited keys");
    for (id, material) in &enc {
        assert_eq!(&reference[id], material);
    }
    let dec_ids: HashSet<Uuid> = dec.iter().copied().collect();
    assert_eq!(dec.len(), KEYS as usize);
    assert_eq!(dec_ids, enc_ids);

    let c = kms.counters(&a, &b).unwrap();
    assert_eq!((c.stored, c.reserved), (0, 0));
    assert_eq!((c.delivered_enc, c.delivered_dec), (KEYS, KEYS));
}

/// Batches larger than what remains never deliver partially.
#[test]
fn oversized_requests_never_split() {
    let kms = Arc::new(KeyManager::new(KmsConfig::default(), Arc::new(SimClock::new(0.0))));
    let a = SaeId::new("alice").unwrap();
    let b = SaeId::new("bob").unwrap();
    kms.register_pair(&a, &b).unwrap();
    let mut link = QkdLink::new(3, AlarmThresholds::default());
    link.tick((100 * KEY_BITS) as f64, 0.04, 1.0).unwrap();
    let carved = link.carve_keys();
    kms.deposit(&a, &b, carved.alice, carved.bob).unwrap();

    let handles: Vec<_> = (0..10)
        .map(|_| {
            let (kms, a, b) = (kms.clone(), a.clone(), b.clone());
            thread::spawn(move || kms.enc_keys(&a, &b, 30).map(|k| k.len()))
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let granted: usize = results.iter().filter_map(|r| r.as_ref().ok()).sum();
    assert_eq!(granted, 90);
    assert_eq!(results.iter().filter(|r| r.is_err()).count(), 7);
    assert_eq!(kms.counters(&a, &b).unwrap().stored, 10);
}
