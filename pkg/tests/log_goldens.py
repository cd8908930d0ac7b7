"""Hand-traced expected records for the fixture logs in fixtures/logs.

Each entry is (error_class, error_message, locations, lines).
"""

GOLDENS = {
    "clean.log": [],
    "prose_file.log": [],
    "attribute_error.log": [
        (
            "AttributeError",
            "'X' object has no attribute 'Y'",
            [("/work/attempt_01.py", 7)],
            [
                '  File "/work/attempt_01.py", line 7, in <module>',
                "    display.Y()",
                "AttributeError: 'X' object has no attribute 'Y'",
            ],
        )
    ],
    "name_error.log": [
        (
            "NameError",
            "name 'Shw' is not defined. Did you mean: 'Show'?",
            [("/work/attempt_01.py", 4)],
            [
                '  File "/work/attempt_01.py", line 4, in <module>',
                "    Shw(contour)",
                "NameError: name 'Shw' is not defined. Did you mean: 'Show'?",
            ],
        )
    ],
    "stacked.log": [
        (
            "NameError",
            "name 'Wavelett' is not defined",
            [("/work/a.py", 3)],
            [
                '  File "/work/a.py", line 3, in <module>',
                "    wavelett = Wavelett()",
                "NameError: name 'Wavelett' is not defined",
            ],
        ),
        (
            "TypeError",
            "SaveScreenshot() missing 1 required positional argument: 'filename'",
            [("/work/b.py", 9), ("/opt/paraview/lib/python3.10/site-packages/paraview/simple.py", 2401)],
            [
                '  File "/work/b.py", line 9, in <module>',
                "    SaveScreenshot()",
                '  File "/opt/paraview/lib/python3.10/site-packages/paraview/simple.py", line 2401, in SaveScreenshot',
                "    return controller.SaveScreenshot(filename, view, **params)",
                "TypeError: SaveScreenshot() missing 1 required positional argument: 'filename'",
            ],
        ),
    ],
    "truncated.log": [
        (
            "UnknownError",
            "",
            [("/work/attempt_02.py", 12), ("/opt/paraview/simple.py", 88)],
            [
                '  File "/work/attempt_02.py", line 12, in <module>',
                "    Render(view)",
                '  File "/opt/paraview/simple.py", line 88, in Render',
            ],
        )
    ],
    "chained.log": [
        (
            "FileNotFoundError",
            "[Errno 2] No such file or directory: 'can.ex2'",
            [("/work/attempt_03.py", 5)],
            [
                '  File "/work/attempt_03.py", line 5, in <module>',
                "    reader = OpenDataFile('can.ex2')",
                "FileNotFoundError: [Errno 2] No such file or directory: 'can.ex2'",
            ],
        ),
        (
            "vtkmodules.util.ReaderException",
            "no reader",
            [("/work/attempt_03.py", 7)],
            [
                '  File "/work/attempt_03.py", line 7, in <module>',
                "    raise vtkmodules.util.ReaderException('no reader')",
                "vtkmodules.util.ReaderException: no reader",
            ],
        ),
    ],
}


def as_tuples(records):
    return [(r.error_class, r.error_message, [tuple(loc) for loc in r.locations], list(r.lines)) for r in records]
