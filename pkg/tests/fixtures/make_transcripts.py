"""Write the scripted replay transcripts used by the end-to-end tests.

Files are named <task>__<mode>__<variant>.jsonl and are replayed in order
(entries carry no digest, so they match whatever request comes next).
"""
import json
from pathlib import Path

HERE = Path(__file__).resolve().parent
OUT = HERE / "transcripts"


def fenced(code):
    return f"Here is the script.\n\n```python\n{code.strip()}\n```\n"


def reference(task):
    return (HERE / "suite" / task / "reference.py").read_text()


PLANS = {
    "sphere-iso": "1. Wavelet source\n2. Contour on RTData with Isosurfaces 157 and 200\n3. Show the contour\n4. SaveScreenshot iso.png",
    "color-blocks": "1. OpenDataFile data/can.txt\n2. Show the reader\n3. ColorBy vtkBlockColors\n4. SaveScreenshot blocks.png",
    "ocean-tubes": "- Sphere with Radius 0.4\n- Cone with Height 0.8\n- Show the sphere\n- Show the cone\n- SaveScreenshot with background color white, ImageResolution 48 x 32, ocean.png",
}

BROKEN_BLOCKS = reference("color-blocks").replace("display = Show(reader, view)", "display = Shw(reader, view)")
BROKEN_OCEAN = [
    reference("ocean-tubes").replace("globe.Radius = 0.4", "globe.Radiuss = 0.4"),
    reference("ocean-tubes").replace("arrow.Height = 0.8", "arrow.Length = 0.8"),
    reference("ocean-tubes").replace("Cone()", "ConeSource()"),
    reference("ocean-tubes").replace('GetActiveViewOrCreate("RenderView")', 'GetActiveViewOrCreate("Render View")'),
    reference("ocean-tubes").replace("Show(globe, view)", "Show(view=view)"),
]
WRONG_NAME_OCEAN = reference("ocean-tubes").replace('"ocean.png"', '"screenshot.png"')


def write(name, replies):
    OUT.mkdir(exist_ok=True)
    with open(OUT / f"{name}.jsonl", "w") as fh:
        for i, content in enumerate(replies):
            usage = {"prompt_tokens": 100 + i, "completion_tokens": len(content) // 4}
            fh.write(json.dumps({"digest": None, "content": content, "usage": usage}) + "\n")


for task in PLANS:
    write(f"{task}__rag__full", [PLANS[task], fenced(reference(task))])

write("sphere-iso__fewshot__full", [fenced(reference("sphere-iso"))])
write("color-blocks__fewshot__full", [fenced(BROKEN_BLOCKS), fenced(reference("color-blocks"))])
write("ocean-tubes__fewshot__full", [fenced(s) for s in BROKEN_OCEAN])

write("sphere-iso__rag__quick", [PLANS["sphere-iso"], fenced(reference("sphere-iso"))])
write("color-blocks__rag__quick", [PLANS["color-blocks"]] + [fenced(BROKEN_BLOCKS)] * 5)
write("ocean-tubes__rag__quick", [PLANS["ocean-tubes"]] + [fenced(WRONG_NAME_OCEAN)] * 5)
