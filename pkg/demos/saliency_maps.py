"""Where does infusion change the prediction?

The saliency map is the per-cell norm of eps(c, f) - eps(c), averaged over
the steered steps. With infusion off the two branches coincide.
"""
from pathlib import Path

import numpy as np

from steercompose import imageio
from steercompose.compositor import Composer, CompositionRequest
from steercompose.config import RunConfig
from steercompose.guidance import normalize01
from steercompose.prompt import PromptSpec
from steercompose.training import PALETTE, render_scene

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

background, words, _ = render_scene(np.random.default_rng(1), 16)
obj = np.full((6, 6, 3), PALETTE["red"])
m_obj = np.zeros((16, 16), bool)
m_obj[5:11, 5:11] = True
m_fg = np.zeros((16, 16), bool)
m_fg[3:13, 3:13] = True
prompt = PromptSpec.from_text("a <ref> red circle <ref> on a blue background")

for infusion in (False, True):
    cfg = RunConfig(weights="builtin:toy16", infusion=infusion, dump_attn=True)
    composer = Composer(cfg)
    _, diag = composer.compose(CompositionRequest(background, obj, m_obj, m_fg, prompt, cfg))
    sal = diag.saliency
    inside = sal[m_fg].sum() / sal.sum() if sal.sum() else float("nan")
    print(f"infusion={infusion}: total mass {sal.sum():.4f}, share inside M_fg {inside:.2f}")
    if infusion:
        imageio.write_gray(OUT / "saliency.png", np.kron(normalize01(sal)[0], np.ones((8, 8))))
        # attention the scene pays to the object, decoder level 0, first steered step
        grid = diag.attention[("decoder0sa", 0)]
        imageio.write_gray(OUT / "prior_attention_decoder0.png", np.kron(normalize01(grid)[0], np.ones((8, 8))))

# fraction of the canvas covered by the foreground, for comparison
print(f"M_fg covers {m_fg.mean():.2f} of the canvas")
