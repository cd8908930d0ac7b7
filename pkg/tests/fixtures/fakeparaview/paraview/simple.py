"""A toy subset of paraview.simple whose screenshots are deterministic pixel art.

Every shown proxy paints one shape; SaveScreenshot rasterises the shown
proxies in creation order onto the view background.
"""
import os

import numpy as np
from PIL import Image

_proxies = []
_view = None

PALETTE = [(230, 85, 13), (49, 130, 189), (116, 196, 118), (158, 154, 200), (253, 208, 162)]


class Proxy:
    kind = "proxy"

    def __init__(self, Input=None, **props):
        self.Input = Input
        self.props = dict(props)
        self.visible = False
        self.color_by = None
        self.id = len(_proxies)
        _proxies.append(self)

    def __setattr__(self, name, value):
        if name[0].isupper() and name not in ("Input",):
            if name not in self.props and name not in self.allowed:
                raise AttributeError(f"'{type(self).__name__}' object has no attribute '{name}'")
            self.props[name] = value
        object.__setattr__(self, name, value)

    allowed = ()


class Sphere(Proxy):
    kind = "sphere"
    allowed = ("Radius", "ThetaResolution", "PhiResolution", "Center")


class Cone(Proxy):
    kind = "cone"
    allowed = ("Radius", "Height", "Resolution", "Direction")


class Wavelet(Proxy):
    kind = "wavelet"
    allowed = ("WholeExtent",)


class Contour(Proxy):
    kind = "contour"
    allowed = ("ContourBy", "Isosurfaces")


class Tube(Proxy):
    kind = "tube"
    allowed = ("Radius", "NumberofSides")


class Glyph(Proxy):
    kind = "glyph"
    allowed = ("GlyphType", "ScaleFactor", "OrientationArray")


class Reader(Proxy):
    kind = "reader"
    allowed = ("FileName",)


class View:
    def __init__(self):
        self.Background = [0.32, 0.34, 0.43]
        self.ViewSize = [32, 32]
        self.CameraPosition = [0, 0, 1]


def OpenDataFile(filename):
    if not os.path.exists(filename):
        raise FileNotFoundError(f"No such file: '{filename}'")
    with open(filename) as fh:
        lines = fh.read().split()
    r = Reader(FileName=filename)
    r.props["blocks"] = len(lines)
    return r


def GetActiveViewOrCreate(kind="RenderView"):
    global _view
    if kind != "RenderView":
        raise ValueError(f"unsupported view type {kind}")
    if _view is None:
        _view = View()
    return _view


def Show(proxy=None, view=None):
    if proxy is None:
        raise RuntimeError("Show() needs a pipeline object")
    proxy.visible = True
    return proxy


def Hide(proxy=None, view=None):
    proxy.visible = False


def ColorBy(display, value=None):
    display.color_by = value


def ResetCamera(view=None):
    pass


def Render(view=None):
    return GetActiveViewOrCreate()


def _paint(img, proxy):
    h, w, _ = img.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = h / 2.0, w / 2.0
    color = PALETTE[proxy.id % len(PALETTE)]
    if proxy.color_by:
        color = tuple(255 - c for c in color)
    if proxy.kind == "sphere":
        r = float(proxy.props.get("Radius", 0.5)) * min(h, w) * 0.8
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif proxy.kind == "cone":
        height = float(proxy.props.get("Height", 1.0)) * h * 0.6
        mask = (yy >= cy - height / 2) & (yy <= cy + height / 2) & (np.abs(xx - cx) <= (yy - (cy - height / 2)) * 0.5)
    elif proxy.kind == "contour":
        levels = proxy.props.get("Isosurfaces", [157.0])
        r = min(h, w) * (0.15 + 0.1 * len(levels))
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = np.abs(d - r) <= 1.5
    elif proxy.kind == "reader":
        n = max(1, int(proxy.props.get("blocks", 1)))
        mask = (xx * n // w) % 2 == 0
    elif proxy.kind == "wavelet":
        mask = (xx + yy) % 4 == 0
    else:
        mask = (xx == yy)
    img[mask] = color


def SaveScreenshot(filename, view=None, ImageResolution=None, OverrideColorPalette=None, TransparentBackground=0):
    view = view or GetActiveViewOrCreate()
    w, h = ImageResolution or view.ViewSize
    bg = [int(round(255 * c)) for c in view.Background]
    if OverrideColorPalette == "WhiteBackground":
        bg = [255, 255, 255]
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = bg
    for proxy in _proxies:
        if proxy.visible:
            _paint(img, proxy)
    Image.fromarray(img).save(filename)
    return True
