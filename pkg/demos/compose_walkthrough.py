"""Walk through one composition with the shipped 16x16 toy weights.

Writes the inputs, the pixel composite and the steered result into
demos/out/ so they can be compared side by side.
"""
from pathlib import Path

import numpy as np

from steercompose import imageio
from steercompose.codec import decode
from steercompose.compositor import Composer, CompositionRequest, place_object
from steercompose.config import RunConfig
from steercompose.denoiser import CostCounter
from steercompose.prompt import PromptSpec
from steercompose.training import PALETTE, render_scene

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)
rng = np.random.default_rng(4)

# --- Inputs ---
# a procedural scene in the style the toy model was trained on
background, words, _ = render_scene(rng, 16)
print("background caption:", " ".join(words))

obj = np.full((6, 6, 3), PALETTE["yellow"])
m_obj = np.zeros((16, 16), bool)
m_obj[5:11, 4:10] = True
m_fg = np.zeros((16, 16), bool)
m_fg[3:13, 2:12] = True

prompt = PromptSpec.from_text(f"a <ref> yellow square <ref> on a {words[5]} background")
print("object token positions:", sorted(prompt.object_token_indices))

# --- Composition ---
cfg = RunConfig(weights="builtin:toy16")
composer = Composer(cfg)
req = CompositionRequest(background, obj, m_obj, m_fg, prompt, cfg)
counters = CostCounter()
store = composer.invert_inputs(req, counters)
image, diag = composer.compose(req, store, counters)

# the naive cut-and-paste the method starts from
canvas = place_object(obj, m_obj, (16, 16))
naive = np.where(m_obj[..., None], canvas, background)

print("steered steps:", diag.steered_steps)
for key, value in sorted(diag.ledger(composer.schedule.num_steps).items()):
    print(f"  {key:22s} {value}")
print("largest pre-clamp overshoot:", round(diag.out_of_range, 4))
outside = np.abs(image - background)[~m_fg].max()
print("max change outside the foreground mask:", outside)

# --- Save ---
scale = lambda a: np.kron(a, np.ones((8, 8, 1))) if a.ndim == 3 else np.kron(a, np.ones((8, 8)))
imageio.write_image(OUT / "background.png", scale(background))
imageio.write_image(OUT / "naive_paste.png", scale(naive))
imageio.write_image(OUT / "composite.png", scale(image))
imageio.write_image(OUT / "inverted_noise_decoded.png", scale(np.clip(decode(store.bg[1000]) * 0.25 + 0.5, 0, 1)))
print("wrote", sorted(p.name for p in OUT.glob("*.png")))
