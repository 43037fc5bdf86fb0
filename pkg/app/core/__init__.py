"""Core processing modules"""
