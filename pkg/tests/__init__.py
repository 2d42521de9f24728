# -*- coding: utf-8 -*-
"""DG Video Enhancer test suite."""
