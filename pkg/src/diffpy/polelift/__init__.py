#!/usr/bin/env python
##############################################################################
#
# diffpy.polelift   pole transport and stacking with a tilted-rotor octocopter
#
# See AUTHORS.rst for a list of people who contributed.
#
##############################################################################

"""diffpy.polelift - flight simulation and control of a pole-stacking octocopter.

Rigid-body dynamics, geometric control, QP control allocation, the self-locking gripper and the
stacking mission, driven from YAML scenarios by the ``polelift`` command.
"""


# End of file
