# -*- coding: utf-8 -*-
#
__version__ = '0.1.0'
__description__ = 'Event-assisted hybrid network for streaming traffic anomaly detection'
