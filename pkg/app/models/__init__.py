"""Experiment data models"""
