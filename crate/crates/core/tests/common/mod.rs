#![allow(dead_code)]

use std::path::Path;

use vmekit::nnet::TdcnConfig;
use vmekit::pipeline::{cmd_gen_data, Config};

pub fn tiny_net(cin: usize, heads: usize) -> TdcnConfig {
    TdcnConfig {
        basis_size: 8,
        kernel_length: 8,
        bottleneck: 6,
        hidden: 8,
        conv_kernel: 3,
        blocks_per_repeat: 2,
        repeats: 1,
        output_heads: heads,
        input_channels: cin,
    }
}

/// A pipeline configuration that runs end to end in seconds.
pub fn tiny_config(seed: u64) -> Config {
    let mut cfg = Config::desk();
    cfg.seed = seed;
    cfg.data.duration_s = 0.5;
    cfg.data.n_train = 4;
    cfg.data.n_dev = 2;
    cfg.data.n_eval = 3;
    cfg.model.separator = tiny_net(1, 3);
    cfg.model.vme = tiny_net(2, 1);
    for st in [&mut cfg.train.separator, &mut cfg.train.vme] {
        st.epochs = 2;
        st.batch_size = 2;
        st.crop_s = 0.25;
        st.dev_limit = 0;
    }
    cfg.eval.alphas = vec![0.0, 1.0];
    cfg.validate().unwrap();
    cfg
}

pub fn generate(cfg: &Config, out: &Path) {
    cmd_gen_data(cfg, out).unwrap();
}
