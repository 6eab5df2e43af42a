"""Drone/edge-server geometry: great-circle distance, polar coordinates, heading."""

from __future__ import annotations

import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def _check_latlon(lat, lon):
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if np.any(~np.isfinite(lat)) or np.any(np.abs(lat) > 90.0):
        raise ValueError("latitude must lie in [-90, 90]")
    if np.any(~np.isfinite(lon)) or np.any(np.abs(lon) > 180.0):
        raise ValueError("longitude must lie in [-180, 180]")
    return lat, lon


def haversine_distance(p1, p2):
    """Great-circle distance in meters between (lat, lon) points in degrees.

    Accepts scalars or broadcastable arrays for each coordinate.
    """
    lat1, lon1 = _check_latlon(p1[0], p1[1])
    lat2, lon2 = _check_latlon(p2[0], p2[1])
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


def bearing(p_from, p_to):
    """Initial great-circle bearing in degrees, clockwise from north, in [0, 360)."""
    lat1, lon1 = _check_latlon(p_from[0], p_from[1])
    lat2, lon2 = _check_latlon(p_to[0], p_to[1])
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dlmb = np.radians(lon2 - lon1)
    y = np.sin(dlmb) * np.cos(phi2)
    x = np.cos(phi1) * np.sin(phi2) - np.sin(phi1) * np.cos(phi2) * np.cos(dlmb)
    deg = np.degrees(np.arctan2(y, x)) % 360.0
    deg = np.where(deg >= 360.0, 0.0, deg)
    return float(deg) if np.ndim(deg) == 0 else deg


def polar_relative(drone, server):
    """(distance m, azimuth deg, elevation deg) of the drone relative to a server.

    Azimuth is the bearing from the drone to the server. Elevation is the
    angle of the drone above the server's horizontal plane, so a drone
    hovering straight above the server sits at +90. Coincident points give
    (0, 0, 0).
    """
    ground = haversine_distance(drone[:2], server[:2])
    dalt = np.asarray(drone[2], dtype=float) - np.asarray(server[2], dtype=float)
    dist = np.hypot(ground, dalt)
    az = bearing(drone[:2], server[:2])
    az = np.where(ground > 0.0, az, 0.0)
    el = np.degrees(np.arctan2(dalt, ground))
    el = np.where(dist > 0.0, el, 0.0)
    if np.ndim(dist) == 0:
        return float(dist), float(az), float(el)
    return dist, az, el


def relative_heading(drone_heading, azimuth_to_server):
    """Signed smallest rotation from heading to the server bearing, in [-180, 180)."""
    h = np.asarray(drone_heading, dtype=float)
    a = np.asarray(azimuth_to_server, dtype=float)
    if np.any((h < 0) | (h >= 360)) or np.any((a < 0) | (a >= 360)):
        raise ValueError("angles must lie in [0, 360)")
    rel = np.mod(a - h + 180.0, 360.0) - 180.0
    rel = np.where(rel >= 180.0, -180.0, rel)
    return float(rel) if np.ndim(rel) == 0 else rel


def enu_to_geodetic(east, north, up, origin):
    """Small-offset conversion of local east/north/up meters to (lat, lon, alt)."""
    lat0, lon0, alt0 = origin
    lat = lat0 + np.degrees(np.asarray(north) / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(np.asarray(east) / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon, alt0 + np.asarray(up)
