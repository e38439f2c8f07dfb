"""Full software stack for a multi-modal thermostatic tactile skin sensor.

Subsystems: ``sim`` (physics stand-in for the hardware), ``acquisition``
(mux framing and wire protocol), ``dsp`` (conditioning filters),
``calibration`` (model fitting and application), ``runtime`` (zeroing,
thermostat, interference detection, material recognition), ``service``
(streaming server, recorder, replayer) and the ``skinstack`` CLI.
"""

__version__ = "0.1.0"

from .frames import FilteredFrame, ForceState, RawFrame

__all__ = ["FilteredFrame", "ForceState", "RawFrame", "__version__"]
