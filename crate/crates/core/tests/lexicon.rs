use narrate_core::lexicon::{tokenize, train_skipgram, Corpus, SkipGramConfig, Vocab, WordEmbeddings};

const ORIGINAL: [&str; 5] = [
    "select a worker unit",
    "build a supply depot",
    "build the marine barracks",
    "click on the barracks",
    "train a marine unit",
];
const ALTERNATE: [&str; 5] = [
    "choose a worker unit",
    "construct a supply depot",
    "construct the marine barracks",
    "left click the barracks",
    "prepare a marine unit",
];

fn trained(seed: u64) -> (WordEmbeddings, Vec<f64>) {
    let corpus = Corpus::bundled();
    let vocab = Vocab::build(corpus.sentences().iter().map(|s| s.as_slice()), 2);
    train_skipgram(&corpus, &vocab, &SkipGramConfig { seed, ..Default::default() }).unwrap()
}

/// Words present in one phrasing but not the other.
fn substituted(a: &str, b: &str) -> (Vec<String>, Vec<String>) {
    let (ta, tb) = (tokenize(a), tokenize(b));
    let only_a = ta.iter().filter(|t| !tb.contains(t)).cloned().collect();
    let only_b = tb.iter().filter(|t| !ta.contains(t)).cloned().collect();
    (only_a, only_b)
}

#[test]
fn bundled_corpus_covers_both_command_sets() {
    let required: Vec<String> = ORIGINAL.iter().chain(&ALTERNATE).flat_map(|c| tokenize(c)).collect();
    let report = Corpus::bundled().check(&required, 500, 20);
    assert!(report.passed, "{:?}", report.failures);
}

#[test]
fn synonym_pairs_are_mutual_top5_neighbors() {
    let (emb, _) = trained(7);
    for (o, a) in ORIGINAL.iter().zip(&ALTERNATE) {
        let (only_o, only_a) = substituted(o, a);
        assert_eq!((only_o.len(), only_a.len()), (1, 1), "{o} / {a}");
        for (w, counterpart) in [(&only_o[0], &only_a[0]), (&only_a[0], &only_o[0])] {
            let near = emb.nearest_words(w, 5).unwrap();
            assert!(near.iter().any(|(n, _)| n == counterpart), "{w}: {near:?}");
        }
    }
}

#[test]
fn build_is_closer_to_construct_than_click() {
    let (emb, _) = trained(7);
    assert!(emb.cosine("build", "construct").unwrap() > emb.cosine("build", "click").unwrap());
}

#[test]
fn choose_is_among_three_nearest_to_select() {
    let (emb, _) = trained(7);
    let near = emb.nearest_words("select", 3).unwrap();
    assert!(near.iter().any(|(w, _)| w == "choose"), "{near:?}");
}

#[test]
fn training_is_deterministic_per_seed() {
    let (a, la) = trained(11);
    let (b, lb) = trained(11);
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn smoothed_epoch_loss_decreases() {
    let (_, losses) = trained(7);
    let smooth: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{losses:?}");
    }
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn embed_tokens_lengths_and_oov() {
    let (emb, _) = trained(7);
    assert_eq!(emb.embed_tokens(&[]).shape(), &[0, 32]);
    let t = emb.embed_tokens(&tokenize("build a zorblax depot"));
    assert_eq!(t.dim(0), 4);
    assert!(t.data()[64..96].iter().all(|&x| x == 0.0));
}
