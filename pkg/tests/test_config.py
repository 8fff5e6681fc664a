"""Config file parsing: network grammar, train and augment scalars."""

import os

import pytest

from cev2 import (AugmentConfig, TrainConfig, build_network, nano_config,
                  parse_augment_config, parse_network_config,
                  parse_train_config)
from cev2.config import read_kv

HERE = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
NANO_CFG = os.path.join(HERE, "configs", "nano.cfg")


def write_cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


class TestReadKv:
    def test_comments_blanks_and_spacing(self, tmp_path):
        p = write_cfg(tmp_path, "\n# full comment\na = 1  # trailing\n  b=2\nc =  three words here \n")
        assert read_kv(p) == {"a": "1", "b": "2", "c": "three words here"}

    def test_later_duplicate_wins(self, tmp_path):
        p = write_cfg(tmp_path, "a = 1\na = 2\n")
        assert read_kv(p) == {"a": "2"}

    def test_missing_equals_rejected_with_line_number(self, tmp_path):
        p = write_cfg(tmp_path, "a = 1\nbroken line\n")
        with pytest.raises(ValueError, match=":2:"):
            read_kv(p)


class TestNetworkGrammar:
    def test_nano_preset_file_round_trips(self):
        cfg = parse_network_config(NANO_CFG)
        assert cfg == nano_config()
        net, store = build_network(cfg, seed=0)
        assert store.count_learnable() == 363_892

    def test_stage_defaults(self, tmp_path):
        p = write_cfg(tmp_path, "stem = 8\nstage.0 = fused-mbconv in=8 out=8\n")
        cfg = parse_network_config(p)
        st = cfg.stages[0]
        assert (st.expansion, st.stride, st.repeats) == (1, 1, 1)
        assert st.attention == "none" and st.safm_after is False

    def test_safm_flag_and_kv_forms(self, tmp_path):
        p = write_cfg(tmp_path, "stem = 8\n"
                                "stage.0 = fused-mbconv in=8 out=8 safm\n"
                                "stage.1 = fused-mbconv in=8 out=8 safm=false\n"
                                "stage.2 = fused-mbconv in=8 out=8 safm=yes\n")
        cfg = parse_network_config(p)
        assert [s.safm_after for s in cfg.stages] == [True, False, True]

    def test_scalar_defaults(self, tmp_path):
        p = write_cfg(tmp_path, "stage.0 = fused-mbconv in=16 out=16\n")
        cfg = parse_network_config(p)
        assert (cfg.stem_channels, cfg.head_channels) == (16, 128)
        assert (cfg.num_classes, cfg.input_size) == (2, 64)
        assert cfg.ce_shared_mlp and cfg.safm_conv_x1
        assert cfg.safm_mode == "depthwise-separable" and cfg.se_ratio == 4

    def test_optional_toggles(self, tmp_path):
        p = write_cfg(tmp_path, "stage.0 = mbconv in=16 out=16 attn=se\n"
                                "ce.shared_mlp = false\nsafm.conv_x1 = off\n"
                                "safm.mode = standard\nse.ratio = 8\n")
        cfg = parse_network_config(p)
        assert cfg.ce_shared_mlp is False and cfg.safm_conv_x1 is False
        assert cfg.safm_mode == "standard" and cfg.se_ratio == 8

    def test_non_contiguous_stages_rejected(self, tmp_path):
        p = write_cfg(tmp_path, "stage.0 = fused-mbconv in=16 out=16\n"
                                "stage.2 = fused-mbconv in=16 out=16\n")
        with pytest.raises(ValueError, match="contiguous"):
            parse_network_config(p)

    def test_stage_missing_channels_rejected(self, tmp_path):
        p = write_cfg(tmp_path, "stage.0 = fused-mbconv e=2\n")
        with pytest.raises(ValueError, match="in= and out="):
            parse_network_config(p)

    def test_unknown_stage_field_rejected(self, tmp_path):
        p = write_cfg(tmp_path, "stage.0 = fused-mbconv in=8 out=8 pad=3\n")
        with pytest.raises(ValueError, match="unknown stage field"):
            parse_network_config(p)

    def test_bad_token_rejected(self, tmp_path):
        p = write_cfg(tmp_path, "stage.0 = fused-mbconv in=8 out=8 quickly\n")
        with pytest.raises(ValueError, match="bad token"):
            parse_network_config(p)


class TestTrainConfig:
    def test_defaults_per_optimizer(self):
        sgd = TrainConfig(network="n", dataset="d")
        assert sgd.optimizer == "sgd-momentum"
        assert sgd.learning_rate == 0.01
        adam = TrainConfig(network="n", dataset="d", optimizer="adam")
        assert adam.learning_rate == 1e-3
        assert (adam.beta1, adam.beta2, adam.adam_eps) == (0.9, 0.999, 1e-8)

    def test_explicit_lr_kept(self):
        cfg = TrainConfig(network="n", dataset="d", learning_rate=0.5)
        assert cfg.learning_rate == 0.5

    def test_parse_full_file(self, tmp_path):
        p = write_cfg(tmp_path, "network = net.cfg\ndataset = data\n"
                                "epochs = 20\nbatch_size = 4\noptimizer = adam\n"
                                "lr = 0.002\nseed = 3\naugment = true\n"
                                "resize = 32\nsplit = 0.75\nwindow = 5\nout = runs/x\n")
        cfg = parse_train_config(p)
        assert cfg.network == "net.cfg" and cfg.dataset == "data"
        assert (cfg.epochs, cfg.batch_size) == (20, 4)
        assert cfg.optimizer == "adam" and cfg.learning_rate == 0.002
        assert cfg.seed == 3 and cfg.augment is True
        assert (cfg.resize_to, cfg.split_frac) == (32, 0.75)
        assert cfg.window == 5 and cfg.out_dir == "runs/x"

    def test_requires_network_and_dataset(self, tmp_path):
        p = write_cfg(tmp_path, "epochs = 20\nwindow = 5\n")
        with pytest.raises(ValueError, match="network= and dataset="):
            parse_train_config(p)

    def test_unknown_key_rejected(self, tmp_path):
        p = write_cfg(tmp_path, "network = n\ndataset = d\nwarmup = 5\n")
        with pytest.raises(ValueError, match="unknown train keys"):
            parse_train_config(p)

    def test_epochs_below_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            TrainConfig(network="n", dataset="d", epochs=5, window=10)

    def test_bad_optimizer(self):
        with pytest.raises(ValueError, match="unknown optimizer"):
            TrainConfig(network="n", dataset="d", optimizer="rmsprop")

    def test_bad_split(self):
        with pytest.raises(ValueError, match="split_frac"):
            TrainConfig(network="n", dataset="d", split_frac=1.0)

    def test_bad_batch(self):
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(network="n", dataset="d", batch_size=0)


class TestAugmentConfig:
    def test_defaults(self):
        cfg = AugmentConfig()
        assert cfg.rotation_deg == (-90.0, 90.0)
        assert cfg.translate_frac == 0.10
        assert cfg.gauss_std == 0.02 and cfg.sp_density == 0.02
        assert cfg.hflip_prob == 0.5 and cfg.scale_range == (0.8, 1.25)
        assert cfg.per_class_new == 100 and cfg.seed == 0

    def test_parse_file(self, tmp_path):
        p = write_cfg(tmp_path, "rotation_min = -30\nrotation_max = 30\n"
                                "translate_frac = 0.05\ngauss_std = 0.01\n"
                                "sp_density = 0.03\nhflip_prob = 1.0\n"
                                "scale_min = 0.9\nscale_max = 1.1\n"
                                "per_class_new = 7\nseed = 42\n")
        cfg = parse_augment_config(p)
        assert cfg.rotation_deg == (-30.0, 30.0)
        assert cfg.scale_range == (0.9, 1.1)
        assert cfg.per_class_new == 7 and cfg.seed == 42
        assert cfg.hflip_prob == 1.0

    def test_unknown_key_rejected(self, tmp_path):
        p = write_cfg(tmp_path, "blur_radius = 2\n")
        with pytest.raises(ValueError, match="unknown augment keys"):
            parse_augment_config(p)

    def test_parsed_bounds_validated(self, tmp_path):
        p = write_cfg(tmp_path, "scale_min = 1.5\nscale_max = 0.5\n")
        with pytest.raises(ValueError, match="scale_range"):
            parse_augment_config(p)

    def test_degenerate_rotation_rejected(self):
        with pytest.raises(ValueError, match="rotation"):
            AugmentConfig(rotation_deg=(10.0, -10.0))

    def test_bad_probability(self):
        with pytest.raises(ValueError, match="hflip_prob"):
            AugmentConfig(hflip_prob=1.5)

    def test_negative_per_class(self):
        with pytest.raises(ValueError, match="per_class_new"):
            AugmentConfig(per_class_new=-1)

    def test_sp_density_range(self):
        with pytest.raises(ValueError, match="sp_density"):
            AugmentConfig(sp_density=1.0)
