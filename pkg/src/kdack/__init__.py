"""Delayed K-hop acknowledgement dissemination for ad-hoc sensor networks."""
