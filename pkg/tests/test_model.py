import torch

from helpers import finite_difference_failures
from vtground.model import GroundingModel


def tiny_model(**kwargs):
    torch.manual_seed(0)
    defaults = dict(
        video_dim=8,
        text_dim=6,
        dim=16,
        heads=2,
        interaction_layers=2,
        encoder_layers=1,
        decoder_layers=1,
        queries=4,
        dropout=0.0,
    )
    defaults.update(kwargs)
    return GroundingModel(**defaults).eval()


def inputs(b=2, l_v=7, l_t=5, seed=1):
    g = torch.Generator().manual_seed(seed)
    return (
        torch.randn(b, l_v, 8, generator=g),
        torch.ones(b, l_v, dtype=torch.bool),
        torch.randn(b, l_t, 6, generator=g),
        torch.ones(b, l_t, dtype=torch.bool),
    )


class TestModelContracts:
    def test_output_shapes(self):
        model = tiny_model()
        out = model(*inputs())
        assert out.saliency.shape == (2, 7)
        assert out.pred_spans.shape == (2, 4, 2)
        assert out.class_logits.shape == (2, 4, 2)
        assert out.non_local_weights.shape == (2, 7)
        assert out.refined_video.shape == (2, 7, 16)
        assert out.anchor.shape == (2, 16)
        assert out.enriched_anchor.shape == (2, 16)
        assert torch.allclose(out.fg_prob + torch.softmax(out.class_logits, -1)[..., 1],
                              torch.ones(2, 4), atol=1e-6)

    def test_saliency_padding_invariance(self):
        model = tiny_model()
        video, vmask, text, tmask = inputs()
        out = model(video, vmask, text, tmask)
        pad_v = torch.cat([video, torch.full((2, 3, 8), 7.0)], dim=1)
        pad_m = torch.cat([vmask, torch.zeros(2, 3, dtype=torch.bool)], dim=1)
        out_pad = model(pad_v, pad_m, text, tmask)
        assert torch.allclose(out_pad.saliency[:, :7], out.saliency, atol=1e-5)
        assert torch.allclose(out_pad.pred_spans, out.pred_spans, atol=1e-5)
        assert torch.allclose(out_pad.non_local_weights[:, :7], out.non_local_weights, atol=1e-5)

    def test_anchor_table_diagonal_matches_forward(self):
        model = tiny_model()
        out = model(*inputs())
        table = model.anchor_video_table(out)
        b = table.shape[0]
        diag = torch.stack([table[i, i] for i in range(b)])
        assert torch.allclose(diag, out.enriched_anchor, atol=1e-6)

    def test_anchor_method_changes_anchor(self):
        out_mean = tiny_model(anchor_method="mean")(*inputs())
        out_max = tiny_model(anchor_method="max")(*inputs())
        assert not torch.allclose(out_mean.anchor, out_max.anchor)

    def test_full_forward_gradients(self):
        torch.manual_seed(2)
        model = tiny_model(
            video_dim=8, text_dim=8, dim=8, heads=2,
            interaction_layers=1, encoder_layers=1, decoder_layers=1, queries=3,
        ).double()
        g = torch.Generator().manual_seed(3)
        video = torch.randn(1, 5, 8, generator=g, dtype=torch.float64)
        text = torch.randn(1, 4, 8, generator=g, dtype=torch.float64)
        vmask = torch.ones(1, 5, dtype=torch.bool)
        tmask = torch.ones(1, 4, dtype=torch.bool)

        def fn():
            out = model(video, vmask, text, tmask)
            return (
                out.saliency.sum()
                + out.pred_spans.sum()
                + torch.softmax(out.class_logits, -1)[..., 0].sum()
            )

        failures = finite_difference_failures(
            fn, model.parameters(), step=1e-4, rtol=1e-3, max_coords_per_param=6
        )
        assert failures == [], failures[:5]
