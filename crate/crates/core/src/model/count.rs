//! Closed-form trainable parameter count, independent of building a model.

use super::config::{ModelConfig, Variant, FRONT_KERNEL, RESCONV_KERNEL};

fn conv(c_in: usize, c_out: usize, kernel: usize) -> usize {
    c_out * c_in * kernel + c_out
}

fn attention(c_in: usize, c_out: usize, alpha: usize) -> usize {
    let reduced = c_in / alpha;
    2 * conv(c_in, reduced, 1) + conv(reduced, c_out, 1)
}

fn block(config: &ModelConfig, c_in: usize, c_out: usize, pre_activate: bool) -> usize {
    let alpha = config.alpha;
    let seo = match config.variant {
        Variant::Light => attention(c_in, c_in, alpha),
        Variant::Heavy => attention(c_in, c_in, alpha) + attention(c_out, c_in, alpha),
    };
    let pre = if pre_activate { 2 * c_in } else { 0 };
    let skip = if c_in != c_out {
        conv(c_in, c_out, 1)
    } else {
        0
    };
    seo + pre
        + conv(c_in, c_out, RESCONV_KERNEL)
        + 2 * c_out
        + conv(c_out, c_out, RESCONV_KERNEL)
        + skip
}

/// Trainable scalars of the network described by `config`: conv and FC
/// weights and biases, batch-norm gamma/beta, GRU matrices and biases, and
/// the attention convolutions. Batch-norm running statistics are excluded.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let front = config.front_width();
    let wide = config.block1_width();
    let hidden = config.gru_width();
    let emb = config.embedding_width();

    let mut total = conv(1, front, FRONT_KERNEL) + 2 * front;
    for i in 0..config.block0_repeats {
        total += block(config, front, front, i > 0);
    }
    for i in 0..config.block1_repeats {
        total += block(config, if i == 0 { front } else { wide }, wide, true);
    }
    total += 3 * (hidden * wide + hidden * hidden + 2 * hidden);
    total += emb * hidden + emb;
    total += config.num_speakers * emb + config.num_speakers;
    total
}
