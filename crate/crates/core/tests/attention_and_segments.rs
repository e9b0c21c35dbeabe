mod common;

use std::collections::BTreeSet;

use common::{max_abs_diff, rule_allows};
use qfsum::nn::vocab::{BOS, EOS, SEP};
use qfsum::nn::{
    encoder_mask, AttentionMask, AttentionWindow, Checkpoint, EncoderInput, Model, ModelConfig, ModelKind, ParamLayout,
    Vocab,
};
use qfsum::rouge::TokenSequence;
use qfsum::segenc::{segenc_encode, segenc_summarize, SegEncConfig};
use qfsum::summarizer::{encoder_inputs, summarize, SummarizerSettings};

const TEXT: &str = "alpha beta gamma delta epsilon zeta eta theta iota kappa what about the";

fn vocab() -> Vocab {
    Vocab::build([TEXT].iter(), 1, None)
}

fn base_cfg(v: &Vocab, max_positions: usize) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(v.len(), max_positions);
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.n_enc_layers = 2;
    cfg
}

#[test]
fn local_global_mask_matches_rule_cell_by_cell() {
    for (n, w, globals) in [(8, 2, vec![0, 1]), (8, 3, vec![]), (8, 1, vec![7]), (5, 4, vec![2])] {
        let g: BTreeSet<usize> = globals.iter().copied().collect();
        let m = AttentionMask::local_global(n, w, &g).unwrap();
        let mut cells = 0;
        for i in 0..n {
            for j in 0..n {
                assert_eq!(m.allows(i, j), rule_allows(i, j, w, &globals), "n={n} w={w} ({i},{j})");
                cells += 1;
            }
        }
        assert_eq!(cells, n * n);
    }
}

#[test]
fn query_positions_become_globals() {
    let mut cfg = ModelConfig::tiny(20, 16);
    cfg.attention_window = AttentionWindow::Local(2);
    cfg.global_query_attention = true;
    let input = EncoderInput::with_query(&[8], SEP, &[9, 10, 11, 12, 13, 14]);
    let m = encoder_mask(&cfg, &input).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            assert_eq!(m.allows(i, j), rule_allows(i, j, 2, &[0, 1]));
        }
    }
}

#[test]
fn covering_window_reproduces_dense_encoder() {
    let v = vocab();
    let ids = v.encode("what about the alpha beta gamma delta epsilon zeta");
    let n = ids.len();
    let dense = Model::init(base_cfg(&v, 32), ParamLayout::seq2seq(), 9).unwrap();
    let want = dense.encode(&ids, &AttentionMask::dense(n, n)).unwrap();
    for window in [2 * (n - 1), 2 * n, 32] {
        for globals in [false, true] {
            let mut cfg = base_cfg(&v, 32);
            cfg.attention_window = AttentionWindow::Local(window);
            cfg.global_query_attention = globals;
            let local = Model::from_parts(cfg, ParamLayout::seq2seq(), dense.params.clone()).unwrap();
            let input = EncoderInput::new(ids.clone(), 3);
            let got = local.encode_input(&input).unwrap();
            assert!(max_abs_diff(&got.data, &want.data) <= 1e-6, "window {window}");
        }
    }
}

#[test]
fn narrow_window_changes_outputs() {
    let v = vocab();
    let ids = v.encode("alpha beta gamma delta epsilon zeta eta theta");
    let dense = Model::init(base_cfg(&v, 32), ParamLayout::seq2seq(), 9).unwrap();
    let mut cfg = base_cfg(&v, 32);
    cfg.attention_window = AttentionWindow::Local(2);
    let local = Model::from_parts(cfg, ParamLayout::seq2seq(), dense.params.clone()).unwrap();
    let a = dense.encode_input(&EncoderInput::new(ids.clone(), 0)).unwrap();
    let b = local.encode_input(&EncoderInput::new(ids, 0)).unwrap();
    assert!(max_abs_diff(&a.data, &b.data) > 1e-3);
}

fn segenc_settings(segment_length: usize) -> (SummarizerSettings, SegEncConfig) {
    let seg = SegEncConfig {
        max_input_tokens: 64,
        segment_length,
        overlap_fraction: 0.5,
        query_budget: 4,
    };
    let mut s = SummarizerSettings::new(4, 6);
    s.segenc = Some(seg);
    (s, seg)
}

#[test]
fn short_source_segenc_equals_vanilla_logits() {
    let v = vocab();
    let model = Model::init(base_cfg(&v, 20), ParamLayout::seq2seq(), 21).unwrap();
    let (seg_settings, seg) = segenc_settings(16);
    let dense_settings = SummarizerSettings::new(4, 6);
    let query = "what about the";
    let source = TokenSequence::from_words("alpha beta gamma delta epsilon");

    let fused = segenc_encode(&model, &v, query, &source, &seg).unwrap();
    assert_eq!(fused.segment_boundaries.len(), 1);
    let vanilla_inputs = encoder_inputs(
        ModelKind::SummarizerDense,
        &model.cfg,
        &dense_settings,
        &v.encode(query),
        &v.encode_words(&source.0),
    )
    .unwrap();
    let vanilla = model.encode_segments(&vanilla_inputs).unwrap();
    assert!(max_abs_diff(&fused.embeddings.data, &vanilla.data) <= 1e-6);

    let prefix = [BOS, v.id("beta"), v.id("zeta"), EOS];
    let a = model.decoder_logits(&prefix, &fused.embeddings).unwrap();
    let b = model.decoder_logits(&prefix, &vanilla).unwrap();
    assert!(max_abs_diff(&a.data, &b.data) <= 1e-6);

    let seg_ck = {
        let mut ck = Checkpoint::new(ModelKind::SummarizerSegenc, model.clone(), v.clone()).unwrap();
        ck.settings = serde_json::to_value(seg_settings).unwrap();
        ck
    };
    let dense_ck = {
        let mut ck = Checkpoint::new(ModelKind::SummarizerDense, model, v).unwrap();
        ck.settings = serde_json::to_value(dense_settings).unwrap();
        ck
    };
    let via_segenc = segenc_summarize(&seg_ck, query, &source, &seg, 4, 6).unwrap();
    let via_dense = summarize(&dense_ck, &dense_settings, query, &source.0).unwrap();
    assert_eq!(via_segenc, via_dense);
}

#[test]
fn long_source_segments_differ_from_one_window() {
    let v = vocab();
    let model = Model::init(base_cfg(&v, 20), ParamLayout::seq2seq(), 21).unwrap();
    let (_, seg) = segenc_settings(4);
    let source = TokenSequence::from_words("alpha beta gamma delta epsilon zeta eta theta iota kappa");
    let fused = segenc_encode(&model, &v, "what about", &source, &seg).unwrap();
    // Stride 2 over 10 tokens: segments start at 0, 2, 4, 6.
    assert_eq!(fused.segment_boundaries.len(), 4);
    for (s, e) in &fused.segment_boundaries {
        assert_eq!(e - s, 3 + 4);
    }
}
