"""
Named configurations of catalogue.py.
"""
import unittest
from assertpy import assert_that
import test_baseclass
import model
import catalogue


class CatalogueTests(test_baseclass.InrTest):
    """
    Presets describe the standard networks with their exact parameter counts.
    """

    # pylint: disable=missing-docstring

    def count(self, name):
        return model.param_count(catalogue.lookup(name).model_spec())

    def test_image_presets(self):
        self.assertEqual(self.count("cameraman_siren"), 198401)
        self.assertEqual(self.count("cameraman_spp"), 199936)
        self.assertEqual(self.count("cameraman_lgs"), 198930)

    def test_audio_presets(self):
        self.assertEqual(self.count("audio_siren"), 198145)
        self.assertEqual(self.count("audio_spp"), 203072)
        self.assertEqual(self.count("audio_lgs"), 198182)
        preset = catalogue.lookup("audio_lgs")
        self.assertEqual((preset.iters, preset.lr), (1000, 1e-4))

    def test_sweep_presets_near_budget(self):
        for name in catalogue.names():
            if name.startswith("sweep_") or name.startswith("global_"):
                assert_that(self.count(name)).is_close_to(200000, 12000)

    def test_half_image_presets_match(self):
        siren = self.count("half_image_siren")
        lgs = self.count("half_image_lgs")
        assert_that(abs(siren - lgs)).is_less_than(0.01 * lgs)

    def test_train_config(self):
        config = catalogue.lookup("cameraman_lgs").train_config(seed=3)
        self.assertEqual((config.iters, config.lr, config.seed), (2000, 5e-4, 3))

    def test_overrides(self):
        spec = catalogue.lookup("cameraman_lgs").model_spec(out_dim=3, merge_kind="fc_add")
        self.assertEqual(spec.out_dim, 3)
        self.assertEqual(spec.merge_kind, "fc_add")
        self.assertEqual(spec.grid.factors, (16, 16))

    def test_unknown_name(self):
        with self.assertRaises(KeyError) as context:
            catalogue.lookup("cameraman")
        self.assertIn("cameraman_lgs", str(context.exception))
        self.assertEqual(catalogue.names(), sorted(catalogue.PRESETS))


if __name__ == '__main__':
    unittest.main()
